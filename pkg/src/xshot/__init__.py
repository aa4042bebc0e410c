"""Multilingual zero-/few-shot in-context learning evaluation harness."""

from xshot.errors import XshotError

__version__ = "0.1.0"
__all__ = ["XshotError", "__version__"]
