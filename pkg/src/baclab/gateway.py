"""Uniform, rate-limited access to text-completion providers.

Every provider gets a per-provider requests-per-minute budget enforced by a
rolling-window token bucket: the bucket holds rpm_limit tokens and each
consumed token is returned exactly 60 seconds after consumption, so the
aggregate refill rate is rpm_limit per minute and no sliding 60 second
window ever sees more than rpm_limit dispatches, regardless of the call
schedule. Transient failures (timeout, 429, 5xx) are retried with
exponential backoff and jitter; 4xx-style rejections are terminal.

Secrets are referenced by environment variable name only and are resolved
at call time; they never appear in configs on disk, completion records, or
log lines.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import httpx

from .clock import Clock, SYSTEM_CLOCK
from .errors import (
    DuplicateProvider,
    InvalidConfig,
    NotFound,
    ProviderError,
    RateBudgetExhausted,
)
from .store import _SAFE_KEY

logger = logging.getLogger(__name__)

REGISTRY_FORMAT_VERSION = 1

TRANSIENT_KINDS = ("timeout", "http_error", "rate_limited")


class TransientProviderFailure(Exception):
    """Retriable provider failure; kind is one of TRANSIENT_KINDS."""

    def __init__(self, kind: str, message: str = ""):
        super().__init__(message or kind)
        if kind not in TRANSIENT_KINDS:
            raise ValueError(f"unknown transient kind {kind!r}")
        self.kind = kind


@dataclass
class ProviderConfig:
    provider_id: str
    model_name: str
    kind: str = "http"              # "http" or "mock"
    endpoint: str = ""
    auth_env: str = ""              # env var NAME holding the API key
    rpm_limit: int = 60
    timeout_seconds: float = 30.0
    max_retries: int = 2
    request_params: dict = field(default_factory=dict)
    default_output: str | None = None   # mock providers only

    def as_dict(self) -> dict:
        return {
            "provider_id": self.provider_id,
            "model_name": self.model_name,
            "kind": self.kind,
            "endpoint": self.endpoint,
            "auth_env": self.auth_env,
            "rpm_limit": self.rpm_limit,
            "timeout_seconds": self.timeout_seconds,
            "max_retries": self.max_retries,
            "request_params": self.request_params,
            "default_output": self.default_output,
        }


@dataclass(frozen=True)
class CompletionRecord:
    provider_id: str
    model_name: str
    prompt_hash: str
    raw_output: str
    latency_seconds: float
    attempt_count: int
    outcome: str                    # ok | timeout | http_error | rate_limited

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"


class WindowedTokenBucket:
    """rpm-style limiter: capacity tokens per rolling window."""

    def __init__(self, capacity: int, window_seconds: float = 60.0, clock: Clock = SYSTEM_CLOCK):
        if capacity < 1:
            raise InvalidConfig("rate limit capacity must be at least 1")
        self.capacity = capacity
        self.window = window_seconds
        self._clock = clock
        self._dispatches: deque[float] = deque()
        self._lock = threading.Lock()

    def _expire(self, now: float) -> None:
        while self._dispatches and self._dispatches[0] + self.window <= now:
            self._dispatches.popleft()

    def try_acquire(self) -> float | None:
        """Take a token now, or return the wait in seconds until one frees."""
        with self._lock:
            now = self._clock.now()
            self._expire(now)
            if len(self._dispatches) < self.capacity:
                self._dispatches.append(now)
                return None
            # floor keeps the wait above float resolution so sleeping on it
            # always moves the clock forward
            return max(self._dispatches[0] + self.window - now, 1e-9)

    def acquire(self, max_wait: float) -> float:
        """Block (via the clock) until a token is free; returns seconds
        waited. Raises RateBudgetExhausted when the wait would exceed
        max_wait."""
        waited = 0.0
        while True:
            wait = self.try_acquire()
            if wait is None:
                return waited
            if waited + wait > max_wait:
                raise RateBudgetExhausted(
                    f"would wait {waited + wait:.1f}s for rate-limit headroom, bound is {max_wait:.1f}s"
                )
            self._clock.sleep(wait)
            waited += wait


class HttpChatTransport:
    """Generic HTTP chat-completion adapter: one JSON POST, bearer auth,
    the reply text under choices[0].message.content."""

    def __init__(self, config: ProviderConfig):
        if not config.endpoint:
            raise InvalidConfig(f"provider {config.provider_id}: http transport needs an endpoint")
        self._config = config

    def __call__(self, prompt_text: str) -> str:
        cfg = self._config
        headers = {}
        if cfg.auth_env:
            secret = os.environ.get(cfg.auth_env)
            if not secret:
                raise ProviderError(f"environment variable {cfg.auth_env} is not set")
            headers["Authorization"] = f"Bearer {secret}"
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt_text}],
            **cfg.request_params,
        }
        try:
            response = httpx.post(cfg.endpoint, json=body, headers=headers,
                                   timeout=cfg.timeout_seconds)
        except httpx.TimeoutException as e:
            raise TransientProviderFailure("timeout", str(e)) from None
        except httpx.HTTPError as e:
            raise TransientProviderFailure("http_error", str(e)) from None
        if response.status_code == 429:
            raise TransientProviderFailure("rate_limited", "provider returned 429")
        if response.status_code >= 500:
            raise TransientProviderFailure("http_error", f"provider returned {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(f"provider returned {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError):
            raise ProviderError("provider response missing choices[0].message.content") from None


class MockTransport:
    """Deterministic offline provider for tests and dry runs.

    script maps a prompt hash (sha256 hex of the full prompt text) to the
    canned output, or is a callable taking the hash. Entries that are
    exceptions get raised, which makes fault injection scriptable. Without
    a script entry the transport answers with default_output, or, when the
    prompt carries the standard score-block template, with a full-credit
    score block derived from it.
    """

    def __init__(self, script: dict | Callable[[str], str] | None = None,
                 default_output: str | None = None,
                 fail_times: int = 0, fail_kind: str = "timeout"):
        self.script = script
        self.default_output = default_output
        self.fail_times = fail_times
        self.fail_kind = fail_kind
        self.calls: list[str] = []      # prompt hashes, in call order
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def __call__(self, prompt_text: str) -> str:
        prompt_hash = hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()
        with self._lock:
            self.calls.append(prompt_hash)
            if self.fail_times > 0:
                self.fail_times -= 1
                raise TransientProviderFailure(self.fail_kind, "scripted failure")
        out = None
        if callable(self.script):
            out = self.script(prompt_hash)
        elif self.script is not None:
            out = self.script.get(prompt_hash)
        if isinstance(out, Exception):
            raise out
        if out is not None:
            return out
        if self.default_output is not None:
            return self.default_output
        return _full_credit_block(prompt_text)


def _full_credit_block(prompt_text: str) -> str:
    """Build a score block awarding the maximum to every criterion, read off
    the template lines ("<i>: <0-<p>>") that the prompt builder emits."""
    bounds = re.findall(r"^(\d+): <0-(\d+)>$", prompt_text, flags=re.MULTILINE)
    if not bounds:
        return ""
    awards = [int(p) for _, p in bounds]
    lines = ["===SCORE==="]
    lines += [f"{i}: {p}" for i, p in enumerate(awards, start=1)]
    lines.append(f"TOTAL: {sum(awards)}")
    lines.append("===END===")
    return "\n".join(lines)


def mock_provider(script: dict | Callable[[str], str] | None = None,
                  provider_id: str = "mock", model_name: str = "mock-model",
                  rpm_limit: int = 100000, default_output: str | None = None,
                  **transport_kwargs) -> ProviderConfig:
    """ProviderConfig for a deterministic offline provider; the transport
    rides on the config and is picked up at registration."""
    config = ProviderConfig(provider_id=provider_id, model_name=model_name,
                            kind="mock", rpm_limit=rpm_limit, default_output=default_output)
    config.transport = MockTransport(script=script, default_output=default_output,
                                     **transport_kwargs)
    return config


@dataclass
class _Registered:
    config: ProviderConfig
    transport: Callable[[str], str]
    bucket: WindowedTokenBucket


class Gateway:
    """Registry of providers plus the rate-limited, retrying call path."""

    def __init__(self, clock: Clock = SYSTEM_CLOCK, max_wait_seconds: float = 300.0,
                 rng: random.Random | None = None, backoff_base: float = 0.5):
        self._clock = clock
        self._max_wait = max_wait_seconds
        self._rng = rng or random.Random()
        self._backoff_base = backoff_base
        self._providers: dict[str, _Registered] = {}
        self.records: list[CompletionRecord] = []

    def register_provider(self, config: ProviderConfig,
                          transport: Callable[[str], str] | None = None) -> str:
        if not _SAFE_KEY.match(config.provider_id):
            raise InvalidConfig(f"provider_id {config.provider_id!r} must match [A-Za-z0-9][A-Za-z0-9_.-]*")
        if config.rpm_limit < 1:
            raise InvalidConfig(f"provider {config.provider_id}: rpm_limit must be at least 1")
        if config.max_retries < 0:
            raise InvalidConfig(f"provider {config.provider_id}: max_retries must be non-negative")
        if config.provider_id in self._providers:
            raise DuplicateProvider(f"provider {config.provider_id} already registered")
        if transport is None:
            transport = getattr(config, "transport", None)
        if transport is None:
            if config.kind == "mock":
                transport = MockTransport(default_output=config.default_output)
            else:
                transport = HttpChatTransport(config)
        bucket = WindowedTokenBucket(config.rpm_limit, clock=self._clock)
        self._providers[config.provider_id] = _Registered(config, transport, bucket)
        return config.provider_id

    def provider_ids(self) -> list[str]:
        return sorted(self._providers)

    def provider_config(self, provider_id: str) -> ProviderConfig:
        return self._require(provider_id).config

    def transport(self, provider_id: str) -> Callable[[str], str]:
        return self._require(provider_id).transport

    def _require(self, provider_id: str) -> _Registered:
        reg = self._providers.get(provider_id)
        if reg is None:
            raise NotFound(f"provider {provider_id} not registered")
        return reg

    def complete(self, provider_id: str, prompt) -> CompletionRecord:
        """Send one prompt, respecting the provider's RPM budget, retrying
        transient failures up to max_retries. Returns a record in every
        transport-outcome case; raises only for an exhausted rate budget or
        a terminal provider rejection."""
        reg = self._require(provider_id)
        text = prompt.rendered() if hasattr(prompt, "rendered") else str(prompt)
        prompt_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()
        started = self._clock.now()
        attempt = 0
        raw_output = ""
        outcome = "ok"
        while True:
            attempt += 1
            reg.bucket.acquire(self._max_wait)
            try:
                raw_output = reg.transport(text)
                outcome = "ok"
                break
            except TransientProviderFailure as failure:
                outcome = failure.kind
                if attempt > reg.config.max_retries:
                    break
                backoff = self._backoff_base * (2 ** (attempt - 1))
                self._clock.sleep(backoff + self._rng.uniform(0, backoff / 4))
            except ProviderError:
                record = CompletionRecord(
                    provider_id, reg.config.model_name, prompt_hash, "",
                    self._clock.now() - started, attempt, "http_error",
                )
                self.records.append(record)
                raise
        record = CompletionRecord(
            provider_id, reg.config.model_name, prompt_hash, raw_output,
            self._clock.now() - started, attempt, outcome,
        )
        self.records.append(record)
        logger.debug("completion %s/%s outcome=%s attempts=%d",
                     provider_id, reg.config.model_name, outcome, attempt)
        return record


# ---------------------------------------------------------------------------
# provider registry file

_REGISTRY_KEYS = {
    "provider_id", "model_name", "kind", "endpoint", "auth_env",
    "rpm_limit", "timeout_seconds", "max_retries", "request_params", "default_output",
}


def load_provider_registry(path: str) -> list[ProviderConfig]:
    """Read a registry file: {"format_version": 1, "providers": [...]}.
    Configs name secrets by env var; no secret material lives in the file."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict) or data.get("format_version") != REGISTRY_FORMAT_VERSION:
        raise InvalidConfig("provider registry: expected format_version 1")
    configs = []
    for i, entry in enumerate(data.get("providers", [])):
        unknown = set(entry) - _REGISTRY_KEYS
        if unknown:
            raise InvalidConfig(f"provider registry entry {i}: unknown keys {sorted(unknown)}")
        if "provider_id" not in entry or "model_name" not in entry:
            raise InvalidConfig(f"provider registry entry {i}: provider_id and model_name are required")
        configs.append(ProviderConfig(**entry))
    return configs


def dump_provider_registry(configs: list[ProviderConfig]) -> str:
    return json.dumps(
        {"format_version": REGISTRY_FORMAT_VERSION,
         "providers": [c.as_dict() for c in configs]},
        ensure_ascii=False, sort_keys=True, indent=2,
    ) + "\n"
