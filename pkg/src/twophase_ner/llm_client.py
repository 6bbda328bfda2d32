"""Chat backends, retrying/caching client, and multi-turn sessions.

``ChatClient`` is what the pipeline talks to. It wraps a backend (live HTTP or
scripted), consults the on-disk cache first, and retries retryable failures
with exponential backoff.

Error classification:

=================  =========  ==========================================
error              retryable  raised when
=================  =========  ==========================================
Timeout            yes        request timed out or host unreachable
HttpStatus         408/409/   non-2xx response
                   425/429/5xx
MalformedResponse  no         body is not a chat-completions document
ScriptExhausted    no         scripted backend has no reply for a turn
=================  =========  ==========================================
"""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx

from .cache import ResponseCache
from .core import DialogueTranscript, NERError, Turn

log = logging.getLogger(__name__)

FINISH_REASONS = ("stop", "length", "other")
RETRYABLE_STATUS = frozenset({408, 409, 425, 429}) | frozenset(range(500, 600))


class BackendError(NERError):
    retryable = False


class Timeout(BackendError, TimeoutError):
    retryable = True


class HttpStatus(BackendError):
    def __init__(self, code: int, body: str = "") -> None:
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code
        self.retryable = code in RETRYABLE_STATUS


class MalformedResponse(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 512
    stop: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.messages[-1][0] != "user":
            raise ValueError("the last message of a request must be a user turn")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": list(self.stop) if self.stop is not None else None,
        }

    @property
    def last_user_message(self) -> str:
        return self.messages[-1][1]


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: Usage = field(default_factory=Usage)

    def __post_init__(self) -> None:
        if self.finish_reason not in FINISH_REASONS:
            object.__setattr__(self, "finish_reason", "other")

    def to_dict(self) -> dict[str, Any]:
        return {
            "content": self.content,
            "finish_reason": self.finish_reason,
            "usage": {"prompt_tokens": self.usage.prompt_tokens, "completion_tokens": self.usage.completion_tokens},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ChatResponse:
        usage = d.get("usage") or {}
        return cls(
            content=d["content"],
            finish_reason=d.get("finish_reason", "stop"),
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def parse_completion_body(body: Any) -> ChatResponse:
    """Read ``choices[0]`` of an OpenAI chat-completions response body."""
    try:
        choice = body["choices"][0]
        content = choice["message"].get("content")
        reason = choice.get("finish_reason") or "other"
    except (KeyError, IndexError, TypeError, AttributeError) as exc:
        raise MalformedResponse(f"unexpected response shape: {exc!r}") from exc
    if reason not in FINISH_REASONS:
        reason = "other"
    if content is None:
        if reason == "stop":
            raise MalformedResponse("finish_reason is 'stop' but message content is missing")
        content = ""
    if not isinstance(content, str):
        raise MalformedResponse(f"message content is {type(content).__name__}, not a string")
    usage = body.get("usage") or {}
    try:
        u = Usage(int(usage.get("prompt_tokens") or 0), int(usage.get("completion_tokens") or 0))
    except (TypeError, ValueError, AttributeError):
        u = Usage()
    return ChatResponse(content, reason, u)


class OpenAICompatibleBackend:
    """POSTs to ``<base_url>/v1/chat/completions``; one attempt per call."""

    def __init__(self, base_url: str, timeout: float = 60.0, api_key: str | None = None) -> None:
        base = base_url.rstrip("/")
        if base.endswith("/v1"):
            base = base[: -len("/v1")]
        self.url = f"{base}/v1/chat/completions"
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers)

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = request.to_dict()
        if body["stop"] is None:
            del body["stop"]
        try:
            resp = self._client.post(self.url, json=body)
        except httpx.TimeoutException as exc:
            raise Timeout(f"request to {self.url} timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise Timeout(f"could not reach {self.url}: {exc}") from exc
        if resp.status_code // 100 != 2:
            raise HttpStatus(resp.status_code, resp.text)
        try:
            data = resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"response is not JSON: {resp.text[:200]!r}") from exc
        return parse_completion_body(data)

    def close(self) -> None:
        self._client.close()


class ScriptedBackend:
    """Offline test double returning predetermined replies.

    Replies come from, in priority order: ``responder(request)``; the queue of
    the longest ``rules`` key found in the last user message; the global
    ``replies`` queue; ``default``. Keying queues by sentence text keeps
    parallel sentences deterministic.
    """

    def __init__(
        self,
        replies: Iterable[str] = (),
        rules: Mapping[str, Sequence[str]] | None = None,
        default: str | None = None,
        responder: Callable[[ChatRequest], str | None] | None = None,
    ) -> None:
        self._queue = deque(replies)
        self._rules = {k: deque(v) for k, v in (rules or {}).items()}
        self._rule_order = sorted(self._rules, key=len, reverse=True)
        self.default = default
        self.responder = responder
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        import json

        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(replies=data)
        return cls(replies=data.get("replies", ()), rules=data.get("rules"), default=data.get("default"))

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
            reply = self._next(request)
        if reply is None:
            raise ScriptExhausted(f"no scripted reply for turn: {request.last_user_message[:80]!r}")
        return ChatResponse(reply, "stop", Usage())

    def _next(self, request: ChatRequest) -> str | None:
        if self.responder is not None:
            reply = self.responder(request)
            if reply is not None:
                return reply
        prompt = request.last_user_message
        for key in self._rule_order:
            if key in prompt:
                q = self._rules[key]
                return q.popleft() if q else self.default
        if self._queue:
            return self._queue.popleft()
        return self.default


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    backend_calls: int = 0

    def as_dict(self) -> dict[str, int]:
        return {"hits": self.hits, "misses": self.misses, "backend_calls": self.backend_calls}


class ChatClient:
    """Routes requests through cache, retries and the backend."""

    def __init__(
        self,
        backend: Backend,
        *,
        model: str = "vicuna",
        temperature: float = 0.0,
        max_tokens: int = 512,
        stop: Sequence[str] | None = None,
        cache: ResponseCache | None = None,
        bypass_cache: bool = False,
        retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.backend = backend
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.stop = tuple(stop) if stop else None
        self.cache = cache
        self.bypass_cache = bypass_cache
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self.stats = CacheStats()
        self._lock = threading.Lock()

    def request(self, messages: Sequence[tuple[str, str]]) -> ChatRequest:
        return ChatRequest(self.model, tuple(messages), self.temperature, self.max_tokens, self.stop)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.cache is not None and not self.bypass_cache:
            cached = self.cache.get(request)
            if cached is not None:
                with self._lock:
                    self.stats.hits += 1
                return cached
            with self._lock:
                self.stats.misses += 1
        response = self._call_with_retries(request)
        if self.cache is not None:
            self.cache.put(request, response)
        return response

    def _call_with_retries(self, request: ChatRequest) -> ChatResponse:
        attempt = 0
        while True:
            with self._lock:
                self.stats.backend_calls += 1
            try:
                return self.backend.complete(request)
            except BackendError as exc:
                if not exc.retryable or attempt >= self.retries:
                    raise
                delay = self.backoff * (2**attempt)
                log.info("retryable backend error (%s); retry %d in %.2fs", exc, attempt + 1, delay)
                self._sleep(delay)
                attempt += 1

    def open_session(self, system_preamble: str | None = None, *, phase_index: int = 1,
                     template_version: str = "") -> Session:
        return Session(self, system_preamble, phase_index=phase_index, template_version=template_version)

    def snapshot_stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(self.stats.hits, self.stats.misses, self.stats.backend_calls)


class Session:
    """Single-owner multi-turn conversation; not thread-safe."""

    def __init__(self, client: ChatClient, system_preamble: str | None = None, *,
                 phase_index: int = 1, template_version: str = "") -> None:
        self.client = client
        self.phase_index = phase_index
        self.template_version = template_version
        self._turns: list[Turn] = []
        if system_preamble:
            self._turns.append(Turn("system", system_preamble))

    def send(self, text: str) -> str:
        messages = [(t.role, t.content) for t in self._turns] + [("user", text)]
        response = self.client.complete(self.client.request(messages))
        self._turns.append(Turn("user", text))
        self._turns.append(Turn("assistant", response.content))
        return response.content

    @property
    def transcript(self) -> DialogueTranscript:
        return DialogueTranscript(self.phase_index, tuple(self._turns), self.template_version, self.client.model)


@dataclass
class BackendSettings:
    kind: str = "live"  # "live" | "scripted"
    base_url: str = "http://localhost:8000"
    model: str = "vicuna"
    api_key: str | None = None
    timeout: float = 60.0
    retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 512
    cache_dir: str | None = None
    no_cache: bool = False
    script: str | None = None

    ENV_PREFIX = "TWOPHASE_NER_"

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None) -> dict[str, Any]:
        """Settings present in the environment, as a partial override dict."""
        env = os.environ if environ is None else environ
        out: dict[str, Any] = {}
        conv: dict[str, Callable[[str], Any]] = {
            "base_url": str, "model": str, "api_key": str, "timeout": float,
            "retries": int, "cache_dir": str, "no_cache": _truthy,
        }
        for name, fn in conv.items():
            value = env.get(cls.ENV_PREFIX + name.upper())
            if value is not None and value != "":
                out[name] = fn(value)
        return out


def _truthy(s: str) -> bool:
    return s.strip().lower() in {"1", "true", "yes", "on"}


def build_client(settings: BackendSettings, backend: Backend | None = None) -> ChatClient:
    if backend is None:
        if settings.kind == "scripted":
            if not settings.script:
                raise ValueError("scripted backend needs a script file")
            backend = ScriptedBackend.from_file(settings.script)
        else:
            backend = OpenAICompatibleBackend(settings.base_url, settings.timeout, settings.api_key)
    cache = ResponseCache(settings.cache_dir) if settings.cache_dir else None
    return ChatClient(
        backend,
        model=settings.model,
        temperature=settings.temperature,
        max_tokens=settings.max_tokens,
        cache=cache,
        bypass_cache=settings.no_cache,
        retries=settings.retries,
    )
