"""Vision-chat backends behind one interface.

Three kinds: a real OpenAI-compatible HTTP client (rate limited, retried,
concurrency capped), a scripted deterministic mock for tests, and a
synthetic responder with configurable yes/reject probabilities that serves
as a statistical oracle for the metrics pipeline.

The provider layer never caches: multi-round sampling needs independent
draws, and record/replay lives in the pipeline where the round index is
part of the cache key.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import requests

from .dataset import Label
from .errors import (
    AuthMissingError,
    ConfigError,
    TransportError,
    UnknownModelError,
    UnscriptedRequestError,
)
from .prompts import Stage

API_KEY_ENV = "LLMFORENSICS_API_KEY"
_FALLBACK_KEY_ENV = "OPENAI_API_KEY"

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 60.0
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class ProviderKind(str, Enum):
    HTTP = "http"
    MOCK = "mock"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class ProviderConfig:
    kind: ProviderKind
    model_id: str
    endpoint: str = ""
    max_concurrency: int = 4
    requests_per_minute: float = 60.0
    max_retries: int = 5
    timeout_s: float = 120.0
    temperature: Optional[float] = None  # None = backend default

    def __post_init__(self):
        if not self.model_id:
            raise ConfigError("model_id must be non-empty")
        if self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")
        if self.requests_per_minute <= 0:
            raise ConfigError("requests_per_minute must be positive")
        if self.kind is ProviderKind.HTTP and not self.endpoint:
            raise ConfigError("http provider requires an endpoint")


@dataclass(frozen=True)
class RoundResponse:
    raw_text: str
    latency_s: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    round_index: int = 0


@dataclass(frozen=True)
class SyntheticBehavior:
    yes_rate_fake: float = 0.9
    yes_rate_real: float = 0.1
    reject_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("yes_rate_fake", "yes_rate_real", "reject_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {v}")


@dataclass(frozen=True)
class RequestContext:
    """Out-of-band request identity for scripting, seeding, and caching."""

    sample_id: str
    stage: Stage
    round_index: int
    label: Optional[Label] = None  # used only by the synthetic responder


class RateLimiter:
    """Sliding-window limiter: at most `rpm` acquisitions per 60 s window.

    Clock and sleep are injectable so the contract is testable with a fake
    clock. Thread safe; token acquisition is serialized.
    """

    WINDOW_S = 60.0

    def __init__(
        self,
        rpm: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._rpm = rpm
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._stamps: list[float] = []

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._stamps = [t for t in self._stamps if now - t < self.WINDOW_S]
                if len(self._stamps) < self._rpm:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + self.WINDOW_S - now
            self._sleep(max(wait, 0.0))


class Provider:
    """Interface: complete() one chat request and return the round's response."""

    config: ProviderConfig

    def complete(self, messages: list[dict], ctx: RequestContext) -> RoundResponse:
        raise NotImplementedError


class HttpProvider(Provider):
    """OpenAI-compatible /chat/completions client.

    Retries timeouts/429/5xx with exponential backoff plus jitter (base 1 s,
    cap 60 s); respects the configured rate limit and concurrency cap. The
    transport is injectable for tests.
    """

    def __init__(
        self,
        config: ProviderConfig,
        transport: Optional[Callable] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.config = config
        self._transport = transport or self._http_post
        self._clock = clock
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._limiter = RateLimiter(config.requests_per_minute, clock, sleep)
        self._slots = threading.Semaphore(config.max_concurrency)

    @staticmethod
    def _api_key() -> str:
        key = os.environ.get(API_KEY_ENV) or os.environ.get(_FALLBACK_KEY_ENV)
        if not key:
            raise AuthMissingError(
                f"set {API_KEY_ENV} (or {_FALLBACK_KEY_ENV}) for the http provider"
            )
        return key

    def _http_post(self, payload: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        resp = requests.post(
            url,
            json=payload,
            headers={"Authorization": f"Bearer {self._api_key()}"},
            timeout=self.config.timeout_s,
        )
        if resp.status_code in RETRYABLE_STATUS:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        resp.raise_for_status()
        return resp.json()

    def complete(self, messages: list[dict], ctx: RequestContext) -> RoundResponse:
        payload = {"model": self.config.model_id, "messages": messages}
        if self.config.temperature is not None:
            payload["temperature"] = self.config.temperature
        last_exc: Optional[Exception] = None
        with self._slots:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    delay = min(BACKOFF_BASE_S * 2 ** (attempt - 1), BACKOFF_CAP_S)
                    self._sleep(delay * self._rng.uniform(0.5, 1.5))
                self._limiter.acquire()
                start = self._clock()
                try:
                    body = self._transport(payload)
                except (TransportError, requests.Timeout, requests.ConnectionError) as exc:
                    last_exc = exc
                    continue
                usage = body.get("usage", {})
                content = body["choices"][0]["message"].get("content") or ""
                return RoundResponse(
                    raw_text=content,
                    latency_s=self._clock() - start,
                    prompt_tokens=usage.get("prompt_tokens", 0),
                    completion_tokens=usage.get("completion_tokens", 0),
                    round_index=ctx.round_index,
                )
        raise TransportError(
            f"request for {ctx.sample_id}/{ctx.stage.value}/r{ctx.round_index} "
            f"failed after {self.config.max_retries} retries"
        ) from last_exc


class MockProvider(Provider):
    """Scripted responses keyed by (sample_id, stage, round_index)."""

    def __init__(self, config: ProviderConfig, script: dict[tuple[str, str, int], str]):
        self.config = config
        self._script = script
        self._lock = threading.Lock()
        self.call_count = 0
        self.calls: list[tuple[str, str, int]] = []

    @classmethod
    def from_jsonl(cls, config: ProviderConfig, path: str | Path) -> "MockProvider":
        script: dict[tuple[str, str, int], str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            script[(obj["sample_id"], obj["stage"], obj["round_index"])] = obj["text"]
        return cls(config, script)

    def complete(self, messages: list[dict], ctx: RequestContext) -> RoundResponse:
        key = (ctx.sample_id, ctx.stage.value, ctx.round_index)
        with self._lock:
            self.call_count += 1
            self.calls.append(key)
        if key not in self._script:
            raise UnscriptedRequestError(f"no script entry for {key}")
        text = self._script[key]
        # Deterministic pseudo token counts so usage accounting is testable.
        prompt_tokens = sum(len(json.dumps(m)) for m in messages) // 4
        return RoundResponse(
            raw_text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=max(1, len(text.split())),
            round_index=ctx.round_index,
        )


_YES_TEXTS = (
    "Yes.",
    "Yes, this appears synthesized.",
    "Yes, the image looks AI-generated.",
)
_NO_TEXTS = (
    "No.",
    "No, this image looks authentic.",
    "No, it appears to be a real photograph.",
)
_REJECT_TEXTS = (
    "I'm sorry, I can't assist with identifying or analyzing this image.",
    "I'm unable to determine whether this image is genuine.",
)

_SYNTHETIC_REPORT = """1. Location of the Tampering Area:
Absolute position: center of the image.
Relative position: between the two largest objects.
2. Contents of the Tampered Area:
A single inserted object.
3. Visible Details in the Tampered Area:
- Edge halo around the object boundary.
- Lighting direction inconsistent with the scene.
4. Generation Method and Type of the Image:
Method: Diffusion. Type: local.
"""


class SyntheticProvider(Provider):
    """Draws reject then yes/no per SyntheticBehavior.

    Fully deterministic in (behavior.seed, sample_id, round_index); the
    emitted texts are realistic phrasings so the real parser sits in the
    loop during statistical validation.
    """

    def __init__(self, config: ProviderConfig, behavior: SyntheticBehavior):
        self.config = config
        self.behavior = behavior

    def complete(self, messages: list[dict], ctx: RequestContext) -> RoundResponse:
        rng = random.Random(f"{self.behavior.seed}|{ctx.sample_id}|{ctx.round_index}")
        if ctx.stage is Stage.ANALYZE:
            return RoundResponse(raw_text=_SYNTHETIC_REPORT, round_index=ctx.round_index)
        if ctx.stage is Stage.JUDGE:
            text = (
                "Absolute Position Accuracy: 4/5\nRelative Position Accuracy: 3/5\n"
                "Readability: 5/5\nCompleteness: 4/5"
            )
            return RoundResponse(raw_text=text, round_index=ctx.round_index)
        if rng.random() < self.behavior.reject_rate:
            text = rng.choice(_REJECT_TEXTS)
        else:
            yes_rate = (
                self.behavior.yes_rate_fake
                if ctx.label is Label.FAKE
                else self.behavior.yes_rate_real
            )
            text = rng.choice(_YES_TEXTS if rng.random() < yes_rate else _NO_TEXTS)
        return RoundResponse(raw_text=text, round_index=ctx.round_index)


def estimate_cost(
    usage: list[RoundResponse],
    price_table: dict[str, dict[str, float]],
    model_id: str,
) -> float:
    """Sum prompt/completion token counts times per-token rates."""
    if model_id not in price_table:
        raise UnknownModelError(f"no prices for model {model_id!r}")
    rates = price_table[model_id]
    return sum(
        r.prompt_tokens * rates["prompt"] + r.completion_tokens * rates["completion"]
        for r in usage
    )
