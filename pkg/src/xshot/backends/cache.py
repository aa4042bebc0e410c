"""Persistent memoization of backend responses.

Entries live at ``<cache_dir>/<key[:2]>/<key>.json`` where ``key`` is the
SHA-256 hex digest of the canonical JSON encoding of
``{"backend_id", "endpoint", "request"}``. Writes go through a temporary
file and an atomic rename, so readers never observe a partial entry.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Callable

from xshot.backends.base import Backend, GenerationParams, ScoredTokens
from xshot.tasks import canonical_json

CACHE_ENV = "XSHOT_CACHE_DIR"

log = logging.getLogger(__name__)


def resolve_cache_dir(configured: str | Path | None) -> Path | None:
    """``XSHOT_CACHE_DIR`` wins over the configured directory when set."""
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(configured) if configured else None


def request_key(backend_id: str, endpoint: str, request: dict[str, Any]) -> str:
    payload = {"backend_id": backend_id, "endpoint": endpoint, "request": request}
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


class DiskCache:
    def __init__(self, cache_dir: str | Path):
        self.root = Path(cache_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, key: str) -> Any | None:
        path = self._path(key)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            if entry.get("key") != key or "response" not in entry:
                raise ValueError("entry does not match its key")
        except FileNotFoundError:
            return None
        except (OSError, ValueError, AttributeError) as e:
            log.warning("discarding unreadable cache entry %s: %s", path, e)
            return None
        return entry["response"]

    def put(self, key: str, response: Any) -> None:
        path = self._path(key)
        path.parent.mkdir(exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(canonical_json({"key": key, "response": response}))
        os.replace(tmp, path)

    def fetch(self, key: str, compute: Callable[[], Any]) -> Any:
        """Return the cached value for ``key``, computing and storing it on a miss."""
        value = self.get(key)
        if value is not None:
            self.hits += 1
            return value
        with self._lock(key):
            value = self.get(key)
            if value is not None:
                self.hits += 1
                return value
            self.misses += 1
            value = compute()
            self.put(key, value)
            return value


class CachedBackend(Backend):
    """Backend wrapper that serves repeated requests from a :class:`DiskCache`."""

    def __init__(self, inner: Backend, cache_dir: str | Path):
        self.inner = inner
        self.descriptor = inner.descriptor
        self.cache = DiskCache(cache_dir)

    def _fetch(self, endpoint: str, request: dict, compute: Callable[[], Any]) -> Any:
        return self.cache.fetch(request_key(self.id, endpoint, request), compute)

    def tokenize(self, text: str) -> list[int]:
        return self._fetch("tokenize", {"text": text}, lambda: self.inner.tokenize(text))

    def score(self, text: str) -> ScoredTokens:
        return self.conditional_score("", text)

    def conditional_score(self, context: str, continuation: str) -> ScoredTokens:
        def compute():
            st = self.inner.conditional_score(context, continuation)
            return {"tokens": list(st.tokens), "logprobs": list(st.logprobs)}

        resp = self._fetch("score", {"context": context, "continuation": continuation}, compute)
        return ScoredTokens(tuple(resp["tokens"]), tuple(resp["logprobs"]))

    def greedy_generate(self, context: str, params: GenerationParams) -> str:
        request = {"context": context, "max_new_tokens": params.max_new_tokens,
                   "stop": list(params.stop_sequences)}
        resp = self._fetch("generate", request,
                           lambda: {"text": self.inner.greedy_generate(context, params)})
        return resp["text"]


def cache_wrap(backend: Backend, cache_dir: str | Path) -> CachedBackend:
    return CachedBackend(backend, cache_dir)
