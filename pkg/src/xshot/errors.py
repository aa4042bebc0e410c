"""Exception hierarchy shared across the harness."""


class XshotError(Exception):
    """Base class for every error raised by the harness."""


class TaskError(XshotError):
    """Malformed task manifest, record, or split request."""


class TemplateError(XshotError):
    """Malformed template or failed instantiation."""


class BackendError(XshotError):
    """A backend could not serve a request."""


class ContextLengthError(BackendError):
    """Input does not fit in the model context window."""


class TransportError(BackendError):
    """Remote endpoint unreachable or failing after retry."""


class ProtocolError(BackendError):
    """Remote endpoint answered with a payload that violates the wire schema."""


class ModelFormatError(BackendError):
    """N-gram model file is malformed."""


class ScoringError(XshotError):
    """Candidates cannot be scored under the requested function."""


class MetricError(XshotError):
    """Inputs to a metric are inconsistent."""
