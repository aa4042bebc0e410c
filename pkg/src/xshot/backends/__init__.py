"""Language-model backends behind one scoring/generation contract."""

from __future__ import annotations

from pathlib import Path

from xshot.backends.base import Backend, CallCounter, GenerationParams, LmDescriptor, ScoredTokens
from xshot.backends.cache import CachedBackend, DiskCache, cache_wrap, resolve_cache_dir
from xshot.backends.oracle import (
    ByteBackend,
    ContextCacheBackend,
    NGramModel,
    UniformBackend,
    train_ngram,
)
from xshot.backends.remote import RemoteBackend
from xshot.errors import BackendError

__all__ = [
    "Backend", "ByteBackend", "CachedBackend", "CallCounter", "ContextCacheBackend", "DiskCache",
    "GenerationParams", "LmDescriptor", "NGramModel", "RemoteBackend", "ScoredTokens",
    "UniformBackend", "cache_wrap", "make_backend", "resolve_cache_dir", "train_ngram",
]


def make_backend(spec: str, context_length: int | None = None) -> Backend:
    """Build a backend from a spec string.

    ``uniform``, ``uniform:V``, ``ngram:PATH``, ``context-cache:PATH[@LAMBDA]``
    or ``remote:URL``.
    """
    kind, _, arg = spec.partition(":")
    kw = {"context_length": context_length} if context_length else {}
    if kind == "uniform":
        return UniformBackend(int(arg) if arg else 256, **kw)
    if kind == "ngram":
        return NGramModel.load(Path(arg), **kw)
    if kind == "context-cache":
        path, _, lam = arg.rpartition("@") if "@" in arg else (arg, "", "")
        return ContextCacheBackend(NGramModel.load(Path(path), **kw), float(lam) if lam else 0.5)
    if kind == "remote":
        if context_length:
            raise BackendError("remote backends report their own context length")
        return RemoteBackend(arg)
    raise BackendError(f"unknown backend spec {spec!r}")
