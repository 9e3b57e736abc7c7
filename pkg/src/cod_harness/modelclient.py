"""OpenAI-compatible chat-completion client with retries and a response cache."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from ._jsonl import AppendLog
from .datamodel import ChatMessage, PartKind, Usage

logger = logging.getLogger(__name__)

BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2

GENERATION_MAX_TOKENS = 1024
JUDGE_MAX_TOKENS = 64

_AUDIO_FORMATS = {
    "audio/wav": "wav",
    "audio/x-wav": "wav",
    "audio/wave": "wav",
    "audio/vnd.wave": "wav",
    "audio/mpeg": "mp3",
    "audio/mp3": "mp3",
    "audio/flac": "flac",
    "audio/x-flac": "flac",
    "audio/ogg": "ogg",
    "audio/webm": "webm",
    "audio/mp4": "m4a",
}


class ModelClientError(Exception):
    pass


class ConfigurationError(ModelClientError):
    pass


class TransportFailure(ModelClientError):
    """Retries exhausted on transport errors or retryable HTTP statuses."""

    def __init__(self, message: str, status: int | None, attempts: int):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class PermanentError(ModelClientError):
    """Non-retryable HTTP error (4xx other than 429)."""

    def __init__(self, message: str, status: int, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    api_key_env_name: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int = GENERATION_MAX_TOKENS
    request_timeout_seconds: float = 120.0
    max_retries: int = 5
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def identity(self) -> dict[str, Any]:
        """Fields that determine a response; network and timing knobs excluded."""
        return {
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_endpoint_config(path: str | Path, **defaults: Any) -> EndpointConfig:
    """Read an endpoint config from a JSON object file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read endpoint config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: endpoint config must be a JSON object")
    merged = {**defaults, **data}
    try:
        return EndpointConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: Usage | None = None
    from_cache: bool = False
    endpoint_latency_ms: float | None = None
    cache_key: str | None = None


def _canonical_messages(messages: Sequence[ChatMessage]) -> list[dict[str, Any]]:
    out = []
    for msg in messages:
        parts = []
        for p in msg.parts:
            if p.kind is PartKind.TEXT:
                parts.append({"kind": "text", "text": p.text})
            else:
                parts.append(
                    {"kind": p.kind.value, "mime": p.mime, "sha256": hashlib.sha256(p.data).hexdigest()}
                )
        out.append({"role": msg.role.value, "parts": parts})
    return out


def cache_key(config: EndpointConfig, messages: Sequence[ChatMessage], nonce: int = 0) -> str:
    """Stable digest of everything that determines an endpoint's answer.

    ``nonce`` separates deliberate re-asks of an identical prompt (judge
    retries); zero means a plain request.
    """
    payload: dict[str, Any] = {
        "config": config.identity(),
        "messages": _canonical_messages(messages),
    }
    if nonce:
        payload["nonce"] = nonce
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Write-once response store, optionally backed by an append-only file."""

    def __init__(self, path: str | Path | None = None):
        self._log = AppendLog(path, fsync=False) if path is not None else None
        self._entries: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        if self._log is not None:
            for rec in self._log.iter_records():
                self._entries.setdefault(rec["key"], rec)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def get(self, key: str) -> ChatResponse | None:
        rec = self._entries.get(key)
        if rec is None:
            return None
        return ChatResponse(
            text=rec["text"], usage=Usage.from_dict(rec.get("usage")), from_cache=True, cache_key=key
        )

    def put(self, key: str, response: ChatResponse) -> ChatResponse:
        """Store ``response`` unless ``key`` is taken; return the stored value."""
        with self._lock:
            if key not in self._entries:
                rec = {
                    "key": key,
                    "text": response.text,
                    "usage": response.usage.to_dict() if response.usage else None,
                }
                if self._log is not None:
                    self._log.append(rec)
                self._entries[key] = rec
        stored = self.get(key)
        assert stored is not None
        return stored


def audio_format(mime: str) -> str:
    mime = mime.lower().split(";")[0].strip()
    return _AUDIO_FORMATS.get(mime, mime.split("/")[-1])


def to_wire_messages(messages: Sequence[ChatMessage]) -> list[dict[str, Any]]:
    """Encode messages in the OpenAI content-parts shape (media inline as base64)."""
    wire = []
    for msg in messages:
        if all(p.kind is PartKind.TEXT for p in msg.parts) and msg.role.value != "user":
            wire.append({"role": msg.role.value, "content": "".join(p.text for p in msg.parts)})
            continue
        content = []
        for p in msg.parts:
            if p.kind is PartKind.TEXT:
                content.append({"type": "text", "text": p.text})
            elif p.kind is PartKind.IMAGE:
                b64 = base64.b64encode(p.data).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": f"data:{p.mime};base64,{b64}"}})
            else:
                b64 = base64.b64encode(p.data).decode("ascii")
                content.append(
                    {"type": "input_audio", "input_audio": {"data": b64, "format": audio_format(p.mime)}}
                )
        wire.append({"role": msg.role.value, "content": content})
    return wire


def _parse_completion(body: Any) -> tuple[str, Usage | None]:
    message = body["choices"][0]["message"]
    content = message.get("content")
    if content is None:
        text = ""
    elif isinstance(content, list):
        text = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    else:
        text = str(content)
    usage = None
    raw_usage = body.get("usage")
    if isinstance(raw_usage, dict) and "completion_tokens" in raw_usage:
        usage = Usage(int(raw_usage.get("prompt_tokens") or 0), int(raw_usage["completion_tokens"]))
    return text, usage


class ModelClient:
    """Sends chats for one endpoint config.

    Thread-safe. At most ``config.max_in_flight`` HTTP requests are
    outstanding at once; backoff sleeps do not hold a slot.
    """

    def __init__(
        self,
        config: EndpointConfig,
        cache: ResponseCache | None = None,
        *,
        http: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.cache = cache if cache is not None else ResponseCache()
        self._http = http
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._count_lock = threading.Lock()
        self.network_requests = 0

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None

    def __enter__(self) -> ModelClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _client(self) -> httpx.Client:
        if self._http is None:
            self._http = httpx.Client(
                timeout=self.config.request_timeout_seconds,
                limits=httpx.Limits(max_connections=self.config.max_in_flight),
            )
        return self._http

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env_name)
        if not key:
            raise ConfigurationError(
                f"environment variable {self.config.api_key_env_name} is not set"
            )
        return key

    def backoff_delay(self, retry_index: int) -> float:
        base = BACKOFF_BASE_SECONDS * BACKOFF_FACTOR**retry_index
        return base * self._rng.uniform(1 - BACKOFF_JITTER, 1 + BACKOFF_JITTER)

    def send_chat(self, messages: Sequence[ChatMessage], *, nonce: int = 0) -> ChatResponse:
        key = cache_key(self.config, messages, nonce)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        with self.cache.key_lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                return hit
            response = self._post(messages, key)
            stored = self.cache.put(key, response)
        return ChatResponse(
            text=stored.text,
            usage=stored.usage,
            from_cache=False,
            endpoint_latency_ms=response.endpoint_latency_ms,
            cache_key=key,
        )

    def _post(self, messages: Sequence[ChatMessage], key: str) -> ChatResponse:
        api_key = self._api_key()
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": cfg.model_id,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
            "messages": to_wire_messages(messages),
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        last_status: int | None = None
        last_error = ""
        attempts = 0
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_delay(attempt - 1))
            attempts += 1
            with self._slots:
                with self._count_lock:
                    self.network_requests += 1
                started = time.perf_counter()
                try:
                    resp = self._client().post(url, json=body, headers=headers)
                except httpx.TransportError as exc:
                    last_status, last_error = None, f"{type(exc).__name__}: {exc}"
                    logger.warning("attempt %d to %s failed: %s", attempts, url, last_error)
                    continue
                latency = (time.perf_counter() - started) * 1000.0
            status = resp.status_code
            if 200 <= status < 300:
                try:
                    text, usage = _parse_completion(resp.json())
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    last_status, last_error = status, f"malformed completion body: {exc}"
                    logger.warning("attempt %d: %s", attempts, last_error)
                    continue
                return ChatResponse(text=text, usage=usage, endpoint_latency_ms=latency, cache_key=key)
            if status == 429 or status >= 500:
                last_status, last_error = status, resp.text[:200]
                logger.warning("attempt %d to %s: HTTP %d", attempts, url, status)
                continue
            raise PermanentError(f"HTTP {status} from {url}: {resp.text[:200]}", status, resp.text)
        raise TransportFailure(
            f"gave up after {attempts} attempts to {url} (last status {last_status}): {last_error}",
            last_status,
            attempts,
        )


def send_chat(
    config: EndpointConfig, messages: Sequence[ChatMessage], cache: ResponseCache | None = None
) -> ChatResponse:
    with ModelClient(config, cache) as client:
        return client.send_chat(messages)
