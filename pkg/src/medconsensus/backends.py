"""Model backends.

Two implementations share one coroutine interface, ``complete(request)``:

* :class:`HttpBackend` speaks the common chat-completions wire format
  (``POST <base_url>/chat/completions``) so hosted and local servers can be
  swapped by configuration alone.
* :class:`MockBackend` replays scripted replies and is fully deterministic;
  the test-suite and offline demos run on it.

Backends are reached through a :class:`BackendPool`, which fails loudly on
unknown ids and remembers when each backend last errored.
"""

from __future__ import annotations

import asyncio
import logging
import os
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Union

import httpx

from .errors import (
    BackendError,
    BackendTimeout,
    ConfigError,
    HttpStatus,
    MalformedUpstreamReply,
    MockUnmatched,
    SchemaViolation,
    UnknownBackend,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise SchemaViolation("chat prompts must be non-empty")
        if self.max_tokens <= 0:
            raise SchemaViolation("max_tokens must be positive")

    def payload(self) -> dict[str, Any]:
        return {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": self.user_prompt},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


class Backend(Protocol):
    async def complete(self, request: ChatRequest) -> str: ...


class HttpBackend:
    """Chat-completions client.

    The API key is read from the environment variable named by
    ``api_key_env`` at call time; keys never live in config files.
    ``max_connections`` bounds in-flight requests to this endpoint.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        timeout_s: float = 120.0,
        max_connections: int = 8,
        transport: httpx.AsyncBaseTransport | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.max_connections = max_connections
        self._transport = transport
        # httpx clients and semaphores are tied to the loop that created them
        self._loop: asyncio.AbstractEventLoop | None = None
        self._client: httpx.AsyncClient | None = None
        self._sem: asyncio.Semaphore | None = None

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _ensure_client(self) -> tuple[httpx.AsyncClient, asyncio.Semaphore]:
        loop = asyncio.get_running_loop()
        if self._client is None or self._loop is not loop:
            self._loop = loop
            self._client = httpx.AsyncClient(
                timeout=self.timeout_s,
                limits=httpx.Limits(max_connections=self.max_connections),
                transport=self._transport,
            )
            self._sem = asyncio.Semaphore(self.max_connections)
        assert self._sem is not None
        return self._client, self._sem

    async def complete(self, request: ChatRequest) -> str:
        client, sem = self._ensure_client()
        url = f"{self.base_url}/chat/completions"
        async with sem:
            try:
                resp = await client.post(url, json=request.payload(), headers=self._headers())
            except httpx.TimeoutException as exc:
                raise BackendTimeout(f"{url} timed out after {self.timeout_s}s") from exc
            except httpx.HTTPError as exc:
                raise BackendError(f"{url}: {exc}") from exc
        if resp.status_code // 100 != 2:
            raise HttpStatus(resp.status_code, resp.text[:500])
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedUpstreamReply(f"unexpected reply shape from {url}") from exc
        if not isinstance(content, str):
            raise MalformedUpstreamReply(f"message content from {url} is not text")
        return content

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None


Matcher = Union[int, str, Sequence[str]]
Reply = Union[str, BaseException, Callable[[ChatRequest], str]]


@dataclass
class Script:
    """One scripted reply; ``hits`` counts how often it fired."""

    matcher: Matcher
    reply: Reply
    delay_s: float = 0.0
    hits: int = 0

    def matches(self, position: int, text: str) -> bool:
        m = self.matcher
        if isinstance(m, bool):
            raise TypeError("matcher must be int, str or a sequence of str")
        if isinstance(m, int):
            return m == position
        if isinstance(m, str):
            return m in text
        return all(part in text for part in m)


class MockBackend:
    """Scripted backend.

    Matchers are checked in registration order and the first match wins.
    An ``int`` matcher fires on that 0-based request position; a ``str``
    fires whenever the combined system+user prompt contains it; a sequence of
    strings requires all of them.  Replies may be text, an exception to raise,
    or a callable taking the request.
    """

    def __init__(self, scripts: Sequence[Script] = ()) -> None:
        self.scripts: list[Script] = list(scripts)
        self.requests: list[ChatRequest] = []

    def script(self, matcher: Matcher, reply: Reply, delay_s: float = 0.0) -> Script:
        s = Script(matcher, reply, delay_s)
        self.scripts.append(s)
        return s

    async def complete(self, request: ChatRequest) -> str:
        position = len(self.requests)
        self.requests.append(request)
        text = f"{request.system_prompt}\n{request.user_prompt}"
        for s in self.scripts:
            if s.matches(position, text):
                s.hits += 1
                if s.delay_s:
                    await asyncio.sleep(s.delay_s)
                reply = s.reply
                if isinstance(reply, BaseException):
                    raise reply
                if callable(reply):
                    return reply(request)
                return reply
        raise MockUnmatched(f"no scripted reply for request #{position}")


@dataclass
class BackendPool:
    backends: dict[str, Backend] = field(default_factory=dict)
    health: dict[str, float] = field(default_factory=dict)

    def register(self, backend_id: str, backend: Backend) -> None:
        self.backends[backend_id] = backend

    def get(self, backend_id: str) -> Backend:
        try:
            return self.backends[backend_id]
        except KeyError:
            raise UnknownBackend(f"backend {backend_id!r} is not registered") from None

    def __contains__(self, backend_id: object) -> bool:
        return backend_id in self.backends

    async def complete(self, backend_id: str, request: ChatRequest) -> str:
        backend = self.get(backend_id)
        try:
            return await backend.complete(request)
        except BackendError:
            self.health[backend_id] = time.time()
            raise

    def script(self, mock_id: str, matcher: Matcher, reply: Reply, delay_s: float = 0.0) -> Script:
        backend = self.get(mock_id)
        if not isinstance(backend, MockBackend):
            raise UnknownBackend(f"backend {mock_id!r} is not a mock backend")
        return backend.script(matcher, reply, delay_s)

    async def aclose(self) -> None:
        for b in self.backends.values():
            if isinstance(b, HttpBackend):
                await b.aclose()

    @classmethod
    def from_config(cls, entries: Mapping[str, Any], base_dir: Path | None = None) -> BackendPool:
        """Build a pool from the ``backends`` section of an engine config."""
        pool = cls()
        for backend_id, entry in entries.items():
            kind = entry.get("type")
            if kind == "http":
                if "base_url" not in entry:
                    raise ConfigError(f"http backend {backend_id!r} needs base_url")
                pool.register(
                    backend_id,
                    HttpBackend(
                        entry["base_url"],
                        api_key_env=entry.get("api_key_env"),
                        timeout_s=float(entry.get("timeout_s", 120.0)),
                        max_connections=int(entry.get("max_connections", 8)),
                    ),
                )
            elif kind == "mock":
                mock = MockBackend()
                for item in entry.get("script", []):
                    mock.script(*_script_entry(item, backend_id, base_dir))
                pool.register(backend_id, mock)
            else:
                raise ConfigError(f"backend {backend_id!r} has unknown type {kind!r}")
        return pool


_SCRIPTED_ERRORS: dict[str, Callable[[], BaseException]] = {
    "timeout": lambda: BackendTimeout("scripted timeout"),
    "http_429": lambda: HttpStatus(429),
    "http_500": lambda: HttpStatus(500),
    "malformed": lambda: MalformedUpstreamReply("scripted malformed reply"),
}


def _script_entry(item: Mapping[str, Any], backend_id: str, base_dir: Path | None) -> tuple[Matcher, Reply, float]:
    if "position" in item:
        matcher: Matcher = int(item["position"])
    elif "match" in item:
        m = item["match"]
        matcher = m if isinstance(m, str) else tuple(m)
    else:
        raise ConfigError(f"mock {backend_id!r}: script entry needs 'match' or 'position'")
    if "reply" in item:
        reply: Reply = item["reply"]
    elif "reply_file" in item:
        path = Path(item["reply_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            reply = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"mock {backend_id!r}: cannot read reply file {path}: {exc}") from exc
    elif "error" in item:
        try:
            make = _SCRIPTED_ERRORS[item["error"]]
        except KeyError:
            raise ConfigError(f"mock {backend_id!r}: unknown scripted error {item['error']!r}") from None

        def reply(request: ChatRequest, make=make) -> str:
            raise make()

    else:
        raise ConfigError(f"mock {backend_id!r}: script entry needs 'reply', 'reply_file' or 'error'")
    return matcher, reply, float(item.get("delay_s", 0.0))
