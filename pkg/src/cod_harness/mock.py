"""In-process scripted OpenAI-compatible endpoint for tests and demos.

``MockEndpoint`` serves ``POST /chat/completions`` on localhost. A responder
callable maps each decoded request body to either a reply string or a
``(status, payload)`` tuple. The server records every request and the peak
number of requests handled concurrently.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Union

Reply = Union[str, tuple[int, Any]]
Responder = Callable[[dict[str, Any]], Reply]


def completion_body(text: str, completion_tokens: int | None = None, prompt_tokens: int = 10) -> dict:
    if completion_tokens is None:
        completion_tokens = len(text.split())
    return {
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    }


def last_user_text(body: dict[str, Any]) -> str:
    """Concatenated text parts of the final user message in a request body."""
    for msg in reversed(body["messages"]):
        if msg["role"] != "user":
            continue
        content = msg["content"]
        if isinstance(content, str):
            return content
        return "".join(p.get("text", "") for p in content if p.get("type") == "text")
    return ""


class Script:
    """Responder replaying a fixed sequence of replies, then repeating the last."""

    def __init__(self, replies: Iterable[Reply]):
        self._replies = deque(replies)
        self._lock = threading.Lock()
        self._last: Reply | None = None

    def __call__(self, body: dict[str, Any]) -> Reply:
        with self._lock:
            if self._replies:
                self._last = self._replies.popleft()
            if self._last is None:
                raise RuntimeError("empty script")
            return self._last


class MockEndpoint:
    def __init__(self, responder: Responder, *, delay: float = 0.0):
        self.responder = responder
        self.delay = delay
        self.requests: list[dict[str, Any]] = []
        self.peak_concurrency = 0
        self._active = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler_class())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def request_count(self) -> int:
        with self._lock:
            return len(self.requests)

    def reset_counters(self) -> None:
        with self._lock:
            self.requests.clear()
            self.peak_concurrency = 0

    def start(self) -> MockEndpoint:
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> MockEndpoint:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def _handle(self, body: dict[str, Any]) -> tuple[int, Any]:
        with self._lock:
            self.requests.append(body)
            self._active += 1
            self.peak_concurrency = max(self.peak_concurrency, self._active)
        try:
            if self.delay:
                time.sleep(self.delay)
            reply = self.responder(body)
        finally:
            with self._lock:
                self._active -= 1
        if isinstance(reply, str):
            return 200, completion_body(reply)
        return reply

    def _handler_class(self):
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, format: str, *args: Any) -> None:
                pass

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                if not self.path.endswith("/chat/completions"):
                    self._send(404, {"error": "not found"})
                    return
                status, payload = endpoint._handle(json.loads(raw))
                self._send(status, payload)

            def _send(self, status: int, payload: Any) -> None:
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler
