"""Text-generation backends: OpenAI-compatible HTTP client and deterministic mocks.

Every pipeline stage talks to a ``generate(GenRequest) -> GenResponse``
backend. The HTTP client adds retry with exponential backoff plus a
client-side token-bucket rate limit; the scripted and parametric mocks
make the whole pipeline reproducible at desk scale.
"""
from __future__ import annotations

import hashlib
import math
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

from .core import DemoForgeError

DEFAULT_TEMPERATURE = 0.5
API_KEY_ENV = "DEMO_FORGE_API_KEY"


class BackendError(DemoForgeError):
    def __init__(self, message: str, *, retryable: bool = False, status: int | None = None):
        self.retryable = retryable
        self.status = status
        super().__init__(message)


@dataclass(frozen=True)
class GenRoute:
    """Opaque routing metadata consumed only by scripted mock backends.

    The HTTP client ignores it; mocks use it to key deterministic
    behavior on which sample/attempt/context a request belongs to.
    """

    sample_id: str = ""
    attempt_index: int = 0
    context_digest: str = ""
    shot_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_new_tokens: int = 512
    n_choices: int = 1
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None
    route: GenRoute | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_choices < 1:
            raise ValueError("n_choices must be >= 1")


@dataclass(frozen=True)
class Choice:
    text: str
    finish_reason: str = "stop"


@dataclass(frozen=True)
class GenResponse:
    choices: tuple[Choice, ...]
    backend_id: str
    usage: Mapping[str, int] | None = None


class Backend(Protocol):
    backend_id: str

    def generate(self, req: GenRequest) -> GenResponse: ...


# ---------------------------------------------------------------------------
# Token estimation


def estimate_tokens(text: str, tokenizer: Callable[[str], int] | None = None) -> int:
    """Cheap token estimate: ceil(utf-8 bytes / 4), or a pluggable exact counter."""
    if tokenizer is not None:
        return tokenizer(text)
    return math.ceil(len(text.encode("utf-8")) / 4)


# ---------------------------------------------------------------------------
# Deterministic mocks


def unit_uniform(*key_parts: object) -> float:
    """Counter-based uniform [0,1): a pure function of the key parts."""
    digest = hashlib.sha256("|".join(str(p) for p in key_parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class _CountingBackend:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._calls = 0
        self._call_keys: list[tuple[str, int]] = []

    def _record(self, req: GenRequest) -> None:
        route = req.route or GenRoute()
        with self._lock:
            self._calls += 1
            self._call_keys.append((route.sample_id, route.attempt_index))

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def duplicate_call_keys(self) -> list[tuple[str, int]]:
        """Routing keys that were generated for more than once."""
        with self._lock:
            seen: set[tuple[str, int]] = set()
            dups = []
            for key in self._call_keys:
                if key in seen:
                    dups.append(key)
                seen.add(key)
            return dups

    def reset_counters(self) -> None:
        with self._lock:
            self._calls = 0
            self._call_keys = []


class ScriptedBackend(_CountingBackend):
    """Replays completions from a behavior function or an explicit map.

    Map keys are (sample_id, context_digest, attempt_index); a None
    digest acts as a wildcard for that slot.
    """

    def __init__(
        self,
        behavior: Callable[[GenRoute, GenRequest], str] | None = None,
        *,
        completion_map: Mapping[tuple[str, str | None, int], str] | None = None,
        default: str | None = None,
        backend_id: str = "mock-scripted",
    ):
        super().__init__()
        self.backend_id = backend_id
        self._behavior = behavior
        self._map = dict(completion_map or {})
        self._default = default

    def _lookup(self, route: GenRoute, req: GenRequest) -> str:
        if self._behavior is not None:
            return self._behavior(route, req)
        key = (route.sample_id, route.context_digest, route.attempt_index)
        if key in self._map:
            return self._map[key]
        wild = (route.sample_id, None, route.attempt_index)
        if wild in self._map:
            return self._map[wild]
        if self._default is not None:
            return self._default
        raise BackendError(
            f"scripted backend has no completion for {key}", retryable=False
        )

    def generate(self, req: GenRequest) -> GenResponse:
        self._record(req)
        route = req.route or GenRoute()
        text = self._lookup(route, req)
        return GenResponse(
            choices=tuple(Choice(text) for _ in range(req.n_choices)),
            backend_id=self.backend_id,
        )


class ParametricBackend(_CountingBackend):
    """Success-probability mock: p = clamp(base + gain * useful_shots, 0, 1).

    A request succeeds (emits the sample's correct completion) with
    probability p drawn from a counter-based PRNG keyed by
    (seed, sample_id, attempt_index); otherwise it emits the wrong
    completion for the sample. Fully deterministic for a fixed seed.
    """

    def __init__(
        self,
        *,
        seed: int,
        base: float,
        gain: float,
        useful_ids: frozenset[str] | set[str] = frozenset(),
        correct: Mapping[str, str],
        wrong: Mapping[str, str] | None = None,
        wrong_default: Callable[[str], str] | None = None,
        backend_id: str = "mock-parametric",
    ):
        super().__init__()
        self.backend_id = backend_id
        self.seed = seed
        self.base = base
        self.gain = gain
        self.useful_ids = frozenset(useful_ids)
        self._correct = dict(correct)
        self._wrong = dict(wrong or {})
        self._wrong_default = wrong_default or (lambda sid: f"'wrong-{sid}'")

    def success_probability(self, useful_in_context: int) -> float:
        return min(1.0, max(0.0, self.base + self.gain * useful_in_context))

    def generate(self, req: GenRequest) -> GenResponse:
        self._record(req)
        route = req.route or GenRoute()
        useful = sum(1 for s in route.shot_ids if s in self.useful_ids)
        p = self.success_probability(useful)
        draw = unit_uniform(self.seed, route.sample_id, route.attempt_index)
        if draw < p and route.sample_id in self._correct:
            text = self._correct[route.sample_id]
        else:
            text = self._wrong.get(route.sample_id) or self._wrong_default(route.sample_id)
        return GenResponse(
            choices=tuple(Choice(text) for _ in range(req.n_choices)),
            backend_id=self.backend_id,
        )


# ---------------------------------------------------------------------------
# HTTP client


class RateLimiter:
    """Client-side token bucket, refilled at requests_per_minute."""

    def __init__(self, requests_per_minute: float, clock=time.monotonic, sleep=time.sleep):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.rate = requests_per_minute / 60.0
        self.capacity = max(1.0, requests_per_minute / 60.0)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float):
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.Timeout as exc:
        raise BackendError(f"timeout after {timeout}s: {exc}", retryable=True) from exc
    except requests.RequestException as exc:
        raise BackendError(f"connection error: {exc}", retryable=True) from exc
    return resp.status_code, (resp.json() if resp.content else {})


class HttpCompletionsBackend:
    """OpenAI-compatible /v1/completions client with retries and rate limiting.

    Retries only retryable failures (connection errors, 5xx, 429) with
    exponential backoff plus jitter, up to the retry budget. The prompt
    is sent verbatim, never mutated.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        requests_per_minute: float | None = None,
        transport: Callable = _requests_transport,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.getenv(API_KEY_ENV, "")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backend_id = f"http:{self.base_url}:{model}"
        self._transport = transport
        self._sleep = sleep
        self._limiter = RateLimiter(requests_per_minute) if requests_per_minute else None
        self._jitter = random.Random()

    def _payload(self, req: GenRequest) -> dict:
        payload = {
            "model": self.model,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_tokens": req.max_new_tokens,
            "n": req.n_choices,
        }
        if req.stop_sequences:
            payload["stop"] = list(req.stop_sequences)
        if req.seed is not None:
            payload["seed"] = req.seed
        return payload

    def generate(self, req: GenRequest) -> GenResponse:
        if not req.prompt:
            raise BackendError("prompt must be non-empty", retryable=False)
        url = f"{self.base_url}/v1/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(req)
        last: BackendError | None = None
        for attempt in range(self.max_retries + 1):
            if self._limiter is not None:
                self._limiter.acquire()
            try:
                status, body = self._transport(url, headers, payload, self.timeout)
            except BackendError as exc:
                last = exc
            else:
                if status < 400:
                    return self._parse(body)
                retryable = status >= 500 or status == 429
                last = BackendError(
                    f"backend returned {status}: {body}", retryable=retryable, status=status
                )
                if not retryable:
                    raise last
            if attempt < self.max_retries and last.retryable:
                delay = self.backoff_base * 2**attempt * (1.0 + self._jitter.random())
                self._sleep(delay)
            elif not last.retryable:
                raise last
        assert last is not None
        raise last

    def _parse(self, body: Mapping) -> GenResponse:
        try:
            choices = tuple(
                Choice(text=c.get("text", ""), finish_reason=c.get("finish_reason", "stop"))
                for c in body["choices"]
            )
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {body}") from exc
        usage = body.get("usage")
        return GenResponse(choices=choices, backend_id=self.backend_id, usage=usage)
