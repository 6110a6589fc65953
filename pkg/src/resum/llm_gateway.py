"""Chat-completions client with a content-addressed disk cache.

Every agent talks to an OpenAI-style ``/chat/completions`` endpoint. Responses
are cached on disk, one JSON file per request digest, so a warm cache makes
every run replayable without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .errors import (
    CacheMissError,
    EmptyResponseError,
    InvalidParameterError,
    ProviderError,
    TransportError,
)

logger = logging.getLogger(__name__)

CACHE_DIR_ENV = "RESUM_CACHE_DIR"
DEFAULT_TEMPERATURE = 1e-10
DEFAULT_BACKOFF = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    model_name: str
    endpoint_url: str
    api_key_ref: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = 1024
    timeout_s: int = 120

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidParameterError(f"{self.agent_id}: temperature must be >= 0")
        if self.max_output_tokens < 1 or self.timeout_s < 1:
            raise InvalidParameterError(f"{self.agent_id}: max_output_tokens and timeout_s must be positive")


@dataclass(frozen=True)
class ChatRequest:
    agent: AgentSpec
    system_message: str
    user_message: str

    def __post_init__(self):
        if not self.user_message:
            raise InvalidParameterError("user_message must be non-empty")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cached: bool = False
    latency_ms: int = 0


def cache_key(request: ChatRequest) -> str:
    """SHA-256 over the fields that determine a completion.

    The endpoint URL and API key are left out so the same logical request
    served from another host hits the same entry.
    """
    payload = json.dumps(
        [
            request.agent.model_name,
            repr(float(request.agent.temperature)),
            request.agent.max_output_tokens,
            request.system_message,
            request.user_message,
        ],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """On-disk cache: ``<dir>/<key[:2]>/<key>.json``."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    @contextmanager
    def lock(self, key: str):
        with self._guard:
            lk = self._locks.setdefault(key, threading.Lock())
        with lk:
            yield

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            with path.open(encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("ignoring corrupt cache entry %s", path)
            return None

    def put(self, key: str, entry: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


class AgentLimiter:
    """Caps in-flight requests for one agent and records the peak."""

    def __init__(self, ceiling: int):
        self.ceiling = ceiling
        self._sem = threading.BoundedSemaphore(ceiling)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0

    @contextmanager
    def slot(self):
        with self._sem:
            with self._lock:
                self.in_flight += 1
                self.peak = max(self.peak, self.in_flight)
            try:
                yield
            finally:
                with self._lock:
                    self.in_flight -= 1


_limiters: dict[tuple[str, int], AgentLimiter] = {}
_limiters_lock = threading.Lock()


def limiter_for(agent_id: str, ceiling: int) -> AgentLimiter:
    """Process-wide limiter shared by every Gateway using this agent."""
    with _limiters_lock:
        key = (agent_id, ceiling)
        if key not in _limiters:
            _limiters[key] = AgentLimiter(ceiling)
        return _limiters[key]


def _is_temperature_rejection(status: int, body: str) -> bool:
    return status in (400, 422) and "temperature" in body.lower()


class Gateway:
    """Sends ChatRequests, with caching, retries and per-agent concurrency caps.

    ``transport`` is passed to httpx (tests use ``httpx.MockTransport``).
    With ``offline=True`` a cache miss raises CacheMissError instead of
    touching the network.
    """

    def __init__(
        self,
        cache_dir: str | os.PathLike | None = None,
        *,
        max_retries: int = 3,
        backoff: Sequence[float] = DEFAULT_BACKOFF,
        max_in_flight_per_agent: int = 4,
        offline: bool = False,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if cache_dir is None:
            cache_dir = os.environ.get(CACHE_DIR_ENV) or None
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        self.max_retries = max_retries
        self.backoff = tuple(backoff)
        self.max_in_flight_per_agent = max_in_flight_per_agent
        self.offline = offline
        self._sleep = sleep
        self._client = httpx.Client(transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def limiter(self, agent: AgentSpec) -> AgentLimiter:
        return limiter_for(agent.agent_id, self.max_in_flight_per_agent)

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        if self.cache is None:
            return self._fetch(request)
        with self.cache.lock(key):
            entry = self.cache.get(key)
            if entry is not None:
                resp = entry["response"]
                return ChatResponse(resp["text"], resp.get("prompt_tokens", 0), resp.get("completion_tokens", 0), True, 0)
            response = self._fetch(request)
            self.cache.put(
                key,
                {
                    "key": key,
                    "request": {
                        "model": request.agent.model_name,
                        "temperature": request.agent.temperature,
                        "max_tokens": request.agent.max_output_tokens,
                        "system": request.system_message,
                        "user": request.user_message,
                    },
                    "response": {
                        "text": response.text,
                        "prompt_tokens": response.prompt_tokens,
                        "completion_tokens": response.completion_tokens,
                    },
                },
            )
            return response

    def _payload(self, request: ChatRequest, temperature: float) -> dict:
        messages = []
        if request.system_message:
            messages.append({"role": "system", "content": request.system_message})
        messages.append({"role": "user", "content": request.user_message})
        return {
            "model": request.agent.model_name,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": request.agent.max_output_tokens,
        }

    def _headers(self, agent: AgentSpec) -> dict:
        headers = {"Content-Type": "application/json"}
        if agent.api_key_ref:
            key = os.environ.get(agent.api_key_ref)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _fetch(self, request: ChatRequest) -> ChatResponse:
        if self.offline:
            raise CacheMissError(f"offline and no cached response for agent {request.agent.agent_id}")
        agent = request.agent
        url = agent.endpoint_url.rstrip("/") + "/chat/completions"
        temperature = agent.temperature
        temperature_fallback_used = False
        last_error: Exception | None = None
        attempt = 0
        with self.limiter(agent).slot():
            while True:
                started = time.monotonic()
                try:
                    http = self._client.post(
                        url,
                        json=self._payload(request, temperature),
                        headers=self._headers(agent),
                        timeout=agent.timeout_s,
                    )
                except httpx.TransportError as exc:
                    last_error = TransportError(f"{agent.agent_id}: {type(exc).__name__}: {exc}")
                else:
                    status = http.status_code
                    if 200 <= status < 300:
                        latency = int((time.monotonic() - started) * 1000)
                        return self._parse(http, agent, latency)
                    body = http.text
                    if _is_temperature_rejection(status, body) and temperature > 0 and not temperature_fallback_used:
                        logger.info("%s rejected temperature %g; retrying with 0", agent.agent_id, temperature)
                        temperature = 0.0
                        temperature_fallback_used = True
                        continue
                    if status != 429 and status < 500:
                        raise ProviderError(status, body)
                    last_error = ProviderError(status, body)
                if attempt >= self.max_retries:
                    raise last_error
                delay = self.backoff[min(attempt, len(self.backoff) - 1)] if self.backoff else 0.0
                logger.warning("%s: %s; retry %d in %.1fs", agent.agent_id, last_error, attempt + 1, delay)
                self._sleep(delay)
                attempt += 1

    @staticmethod
    def _parse(http: httpx.Response, agent: AgentSpec, latency_ms: int) -> ChatResponse:
        try:
            data = http.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderError(http.status_code, f"malformed completion body: {http.text}") from None
        if not isinstance(text, str) or not text.strip():
            raise EmptyResponseError(f"{agent.agent_id} returned an empty completion")
        usage = data.get("usage") or {}
        return ChatResponse(
            text,
            int(usage.get("prompt_tokens") or 0),
            int(usage.get("completion_tokens") or 0),
            False,
            latency_ms,
        )
