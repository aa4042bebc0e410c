"""Serve any in-process backend over the ``/v1`` HTTP protocol.

Used as the stub server in protocol tests and to expose an oracle model to
remote clients (``xshot serve``).
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from xshot.backends.base import Backend, GenerationParams
from xshot.errors import BackendError, ContextLengthError


class BackendServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self.requests_seen: Counter[str] = Counter()
        self._count_lock = threading.Lock()
        super().__init__((host, port), _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def count(self, endpoint: str) -> None:
        with self._count_lock:
            self.requests_seen[endpoint] += 1

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def answer(self, endpoint: str, body: dict) -> dict:
        b = self.backend
        if endpoint == "info":
            d = b.descriptor
            return {"id": d.id, "vocab_size": d.vocab_size, "context_length": d.context_length}
        if endpoint == "tokenize":
            return {"tokens": b.tokenize(_str(body, "text"))}
        if endpoint == "score":
            st = b.conditional_score(_str(body, "context"), _str(body, "continuation"))
            return {"tokens": list(st.tokens), "logprobs": list(st.logprobs)}
        if endpoint == "generate":
            n = body.get("max_new_tokens")
            stop = body.get("stop", [])
            if not isinstance(n, int) or not isinstance(stop, list) or not all(isinstance(s, str) for s in stop):
                raise ValueError("max_new_tokens must be an integer and stop a list of strings")
            text = b.greedy_generate(_str(body, "context"), GenerationParams(n, tuple(stop)))
            return {"text": text}
        raise KeyError(endpoint)


def _str(body: dict, key: str) -> str:
    v = body.get(key)
    if not isinstance(v, str):
        raise ValueError(f"{key!r} must be a string")
    return v


class _Handler(BaseHTTPRequestHandler):
    server: BackendServer

    def log_message(self, format, *args):
        pass

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        path = self.path.rstrip("/")
        if not path.startswith("/v1/"):
            return self._reply(404, {"error": f"unknown path {self.path}"})
        endpoint = path[len("/v1/"):]
        expected = "GET" if endpoint == "info" else "POST"
        if method != expected:
            return self._reply(405, {"error": f"{method} not allowed on {path}"})
        self.server.count(endpoint)
        body = {}
        if method == "POST":
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                if not isinstance(body, dict):
                    raise ValueError("body must be a JSON object")
            except ValueError as e:
                return self._reply(400, {"error": f"bad request body: {e}", "type": "bad_request"})
        try:
            self._reply(200, self.server.answer(endpoint, body))
        except KeyError:
            self._reply(404, {"error": f"unknown endpoint {endpoint}"})
        except ContextLengthError as e:
            self._reply(400, {"error": str(e), "type": "context_length"})
        except (ValueError, BackendError) as e:
            self._reply(400, {"error": str(e), "type": "bad_request"})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")
