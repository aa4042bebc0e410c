from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from xshot.errors import BackendError, ContextLengthError


@dataclass(frozen=True)
class LmDescriptor:
    id: str
    vocab_size: int
    context_length: int

    def __post_init__(self):
        if self.vocab_size < 2:
            raise BackendError("vocab_size must be at least 2")
        if self.context_length < 8:
            raise BackendError("context_length must be at least 8")


@dataclass(frozen=True)
class ScoredTokens:
    """Token ids with their natural-log conditional probabilities."""

    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise BackendError("tokens and logprobs differ in length")
        # `not lp <= 0` also rejects NaN
        if any(not lp <= 0.0 for lp in self.logprobs):
            raise BackendError("backend returned a logprob that is positive or NaN")

    def __len__(self) -> int:
        return len(self.tokens)

    def total(self) -> float:
        return math.fsum(self.logprobs)


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 32
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise BackendError("max_new_tokens must be at least 1")


class Backend(ABC):
    """Scoring and generation surface shared by every language model."""

    descriptor: LmDescriptor

    @property
    def id(self) -> str:
        return self.descriptor.id

    @abstractmethod
    def tokenize(self, text: str) -> list[int]: ...

    def score(self, text: str) -> ScoredTokens:
        return self.conditional_score("", text)

    @abstractmethod
    def conditional_score(self, context: str, continuation: str) -> ScoredTokens: ...

    @abstractmethod
    def greedy_generate(self, context: str, params: GenerationParams) -> str: ...

    def check_length(self, n_tokens: int) -> None:
        if n_tokens > self.descriptor.context_length:
            raise ContextLengthError(
                f"{n_tokens} tokens exceed context length {self.descriptor.context_length}"
            )


def cut_at_stop(text: str, stops: Sequence[str]) -> tuple[str, bool]:
    """Truncate ``text`` before the earliest stop sequence occurrence."""
    hits = [i for i in (text.find(s) for s in stops if s) if i != -1]
    if not hits:
        return text, False
    return text[: min(hits)], True


class CallCounter(Backend):
    """Transparent proxy that counts calls reaching the wrapped backend."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.descriptor = inner.descriptor
        self.calls: Counter[str] = Counter()
        self._lock = threading.Lock()

    def _hit(self, name: str) -> None:
        with self._lock:
            self.calls[name] += 1

    @property
    def total(self) -> int:
        return sum(self.calls.values())

    def reset(self) -> None:
        with self._lock:
            self.calls.clear()

    def tokenize(self, text):
        self._hit("tokenize")
        return self.inner.tokenize(text)

    def score(self, text):
        self._hit("score")
        return self.inner.score(text)

    def conditional_score(self, context, continuation):
        self._hit("conditional_score")
        return self.inner.conditional_score(context, continuation)

    def greedy_generate(self, context, params):
        self._hit("greedy_generate")
        return self.inner.greedy_generate(context, params)
