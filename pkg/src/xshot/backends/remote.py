"""HTTP/JSON client for models served behind the ``/v1`` scoring protocol."""

from __future__ import annotations

import json
import logging
import math
import socket
import threading
import urllib.error
import urllib.request
from typing import Any

from xshot.backends.base import Backend, GenerationParams, LmDescriptor, ScoredTokens, cut_at_stop
from xshot.errors import ContextLengthError, ProtocolError, TransportError

log = logging.getLogger(__name__)

_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


def _is_int_list(v: Any) -> bool:
    return isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v)


def _is_num_list(v: Any) -> bool:
    return isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)


def post_json(url: str, payload: dict | None, timeout: float) -> Any:
    """One JSON request with a single retry on transient failures."""
    data = None if payload is None else json.dumps(payload, ensure_ascii=False).encode("utf-8")
    last: Exception | None = None
    for attempt in range(2):
        req = urllib.request.Request(url, data=data, method="GET" if data is None else "POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = resp.read()
        except urllib.error.HTTPError as e:
            if e.code in _TRANSIENT_STATUS:
                last = e
                log.warning("transient HTTP %s from %s (attempt %d)", e.code, url, attempt + 1)
                continue
            detail = _error_detail(e)
            if detail.get("type") == "context_length":
                raise ContextLengthError(detail.get("error", "context length exceeded")) from None
            raise TransportError(f"{url}: HTTP {e.code}: {detail.get('error', e.reason)}") from None
        except (urllib.error.URLError, ConnectionError, socket.timeout) as e:
            last = e
            log.warning("transport failure on %s (attempt %d): %s", url, attempt + 1, e)
            continue
        try:
            return json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ProtocolError(f"{url}: response is not JSON") from None
    raise TransportError(f"{url}: failed after retry: {last}")


def _error_detail(e: urllib.error.HTTPError) -> dict:
    try:
        detail = json.loads(e.read().decode("utf-8"))
        return detail if isinstance(detail, dict) else {}
    except Exception:
        return {}


class RemoteBackend(Backend):
    """Client for a server speaking the ``/v1/{info,tokenize,score,generate}`` protocol.

    Log-probabilities are ingested in natural log; a server may declare
    another base with a ``"log_base"`` field and values are converted.
    """

    def __init__(self, base_url: str, timeout: float = 60.0, max_in_flight: int = 8):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._descriptor: LmDescriptor | None = None

    def _call(self, endpoint: str, payload: dict | None = None) -> dict:
        with self._slots:
            resp = post_json(f"{self.base_url}/v1/{endpoint}", payload, self.timeout)
        if not isinstance(resp, dict):
            raise ProtocolError(f"/v1/{endpoint}: response is not an object")
        return resp

    @property
    def descriptor(self) -> LmDescriptor:
        if self._descriptor is None:
            info = self._call("info")
            if not (isinstance(info.get("id"), str) and isinstance(info.get("vocab_size"), int)
                    and isinstance(info.get("context_length"), int)):
                raise ProtocolError("/v1/info: expected id, vocab_size, context_length")
            self._descriptor = LmDescriptor(info["id"], info["vocab_size"], info["context_length"])
        return self._descriptor

    def tokenize(self, text: str) -> list[int]:
        resp = self._call("tokenize", {"text": text})
        if not _is_int_list(resp.get("tokens")):
            raise ProtocolError("/v1/tokenize: tokens must be a list of integers")
        return resp["tokens"]

    def conditional_score(self, context: str, continuation: str) -> ScoredTokens:
        resp = self._call("score", {"context": context, "continuation": continuation})
        tokens, logprobs = resp.get("tokens"), resp.get("logprobs")
        if not _is_int_list(tokens) or not _is_num_list(logprobs) or len(tokens) != len(logprobs):
            raise ProtocolError("/v1/score: tokens and logprobs must be aligned numeric lists")
        base = resp.get("log_base")
        if base is not None:
            if not isinstance(base, (int, float)) or base <= 1:
                raise ProtocolError("/v1/score: log_base must be a number > 1")
            scale = math.log(base)
            logprobs = [lp * scale for lp in logprobs]
        return ScoredTokens(tuple(tokens), tuple(float(lp) for lp in logprobs))

    def greedy_generate(self, context: str, params: GenerationParams) -> str:
        resp = self._call("generate", {"context": context, "max_new_tokens": params.max_new_tokens,
                                       "stop": list(params.stop_sequences)})
        if not isinstance(resp.get("text"), str):
            raise ProtocolError("/v1/generate: text must be a string")
        # servers may return the stop sequence itself; strip defensively
        return cut_at_stop(resp["text"], params.stop_sequences)[0]
