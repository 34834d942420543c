"""Uniform chat-completion interface: remote HTTP backends plus a
deterministic scripted backend for tests and replay, with retry, rate
limiting, and fenced-code extraction."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

FENCE = "```"
RUST_FENCE = "```rust"

# sentinels understood by the scripted backend, for fault-injection fixtures
BACKEND_ERROR_SENTINEL = "<<BACKEND_ERROR>>"
TRUNCATED_SENTINEL = "<<TRUNCATED>>"


class GenerationError(Exception):
    """The backend produced no extractable code."""


class TransportError(Exception):
    """Transient transport failure; eligible for retry."""


class BackendConfigError(Exception):
    """Backend configuration is unusable."""


class FinishReason(str, Enum):
    complete = "complete"
    length_truncated = "length_truncated"
    backend_error = "backend_error"


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class RawResponse:
    text: str
    finish_reason: FinishReason
    usage: TokenUsage = TokenUsage()


@dataclass(frozen=True)
class GenerationParams:
    temperature: float
    max_tokens: int = 4096
    top_p: float | None = None
    top_k: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.top_p is not None and not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")


@dataclass(frozen=True)
class BackendSpec:
    name: str
    endpoint: str = ""
    model: str = ""
    auth_env: str | None = None
    rate_limit: int = 600  # requests per minute
    retries: int = 2
    context_limit: int | None = None  # max prompt length admitted locally
    backoff_base_s: float = 1.0

    def __post_init__(self):
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


class RateLimiter:
    """Token bucket admitting `per_minute` requests per minute."""

    def __init__(self, per_minute: int):
        self._capacity = max(1.0, float(per_minute))
        self._rate = self._capacity / 60.0
        self._tokens = self._capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Replays canned responses.

    Lookup order: `<root>/by-digest/<sha256(prompt)>.txt`, then the ordered
    playlist `<root>/playlist/<tag>/<n>.txt` where `tag` is the program id and
    `n` advances with each request for that program.  A response file starting
    with a sentinel marker simulates a backend failure or truncation.
    """

    def __init__(self, root: str | Path, name: str = "scripted", rate_limit: int = 600_000):
        self.root = Path(root)
        self.spec = BackendSpec(name=name, model="scripted", rate_limit=rate_limit, retries=0)
        self.limiter = RateLimiter(self.spec.rate_limit)
        self._cursors: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def send(self, prompt: str, params: GenerationParams, tag: str | None = None) -> RawResponse:
        path = self.root / "by-digest" / f"{prompt_digest(prompt)}.txt"
        if not path.is_file() and tag is not None:
            with self._lock:
                idx = self._cursors[tag]
                self._cursors[tag] += 1
            path = self.root / "playlist" / tag / f"{idx:03d}.txt"
        if not path.is_file():
            logger.warning("scripted backend has no response for tag=%s (%s)", tag, path.name)
            return RawResponse("", FinishReason.backend_error)
        text = path.read_text(encoding="utf-8")
        return self._decode(prompt, text)

    @staticmethod
    def _decode(prompt: str, text: str) -> RawResponse:
        if text.startswith(BACKEND_ERROR_SENTINEL):
            return RawResponse("", FinishReason.backend_error)
        finish = FinishReason.complete
        if text.startswith(TRUNCATED_SENTINEL):
            text = text[len(TRUNCATED_SENTINEL):]
            finish = FinishReason.length_truncated
        usage = TokenUsage(prompt_tokens=len(prompt.split()), completion_tokens=len(text.split()))
        return RawResponse(text, finish, usage)


class HttpBackend:
    """OpenAI-style chat-completions backend."""

    def __init__(self, spec: BackendSpec, timeout_s: float = 120.0):
        self.spec = spec
        self.limiter = RateLimiter(spec.rate_limit)
        self._timeout_s = timeout_s
        if spec.auth_env and spec.auth_env not in os.environ:
            raise BackendConfigError(
                f"backend {spec.name}: auth environment variable {spec.auth_env} is not set"
            )

    def send(self, prompt: str, params: GenerationParams, tag: str | None = None) -> RawResponse:
        headers = {"Content-Type": "application/json"}
        if self.spec.auth_env:
            headers["Authorization"] = f"Bearer {os.environ[self.spec.auth_env]}"
        body = {
            "model": self.spec.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.top_p is not None:
            body["top_p"] = params.top_p
        try:
            resp = requests.post(
                self.spec.endpoint, headers=headers, json=body, timeout=self._timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            logger.error("backend %s returned HTTP %s", self.spec.name, resp.status_code)
            return RawResponse("", FinishReason.backend_error)
        payload = resp.json()
        choice = payload["choices"][0]
        finish = choice.get("finish_reason", "stop")
        usage = payload.get("usage", {})
        return RawResponse(
            text=choice["message"]["content"],
            finish_reason=(
                FinishReason.length_truncated if finish == "length" else FinishReason.complete
            ),
            usage=TokenUsage(
                prompt_tokens=usage.get("prompt_tokens", 0),
                completion_tokens=usage.get("completion_tokens", 0),
            ),
        )


def complete(backend, prompt: str, params: GenerationParams, tag: str | None = None) -> RawResponse:
    """Issue one completion with rate limiting and exponential-backoff retry.

    Exhausted retries degrade to a backend_error response rather than raising,
    so the pipeline can classify the program and move on.
    """
    spec: BackendSpec = backend.spec
    if spec.context_limit is not None and len(prompt) > spec.context_limit:
        logger.warning("prompt (%d chars) exceeds context limit of %s", len(prompt), spec.name)
        return RawResponse("", FinishReason.backend_error)
    limiter = getattr(backend, "limiter", None)
    last_error = None
    for attempt in range(spec.retries + 1):
        if limiter is not None:
            limiter.acquire()
        try:
            return backend.send(prompt, params, tag=tag)
        except TransportError as exc:
            last_error = exc
            if attempt < spec.retries:
                delay = spec.backoff_base_s * (2 ** attempt)
                logger.warning(
                    "backend %s transport failure (%s), retry %d/%d in %.2fs",
                    spec.name, exc, attempt + 1, spec.retries, delay,
                )
                time.sleep(delay)
    logger.error("backend %s exhausted retries: %s", spec.name, last_error)
    return RawResponse("", FinishReason.backend_error)


def wrap_in_fence(code: str) -> str:
    return f"{RUST_FENCE}\n{code}\n{FENCE}"


def extract_code(raw: RawResponse) -> str:
    """Contents of the first rust-tagged fence (or, failing that, the first
    untagged fence).  Raises GenerationError when no usable block exists."""
    if raw.finish_reason is not FinishReason.complete:
        raise GenerationError(f"response unusable: finish_reason={raw.finish_reason.value}")
    lines = raw.text.split("\n")
    opener = None
    for i, line in enumerate(lines):
        if line.strip() == RUST_FENCE:
            opener = i
            break
    if opener is None:
        for i, line in enumerate(lines):
            stripped = line.strip()
            if stripped.startswith(FENCE):
                if stripped == FENCE:
                    opener = i
                break  # first fence is tagged with some other language: give up
    if opener is None:
        raise GenerationError("no code fence in response")
    for j in range(opener + 1, len(lines)):
        if lines[j].strip() == FENCE:
            return "\n".join(lines[opener + 1 : j])
    raise GenerationError("unterminated code fence")


def load_backends(config_path: str | Path) -> dict[str, object]:
    """Parse a backend config file into ready-to-use backend objects.

    The file is JSON: {"backends": [{"kind": "http"|"scripted", ...}]} with
    BackendSpec fields inline; scripted entries take a "dir" relative to the
    config file.
    """
    config_path = Path(config_path)
    try:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BackendConfigError(f"cannot read backend config {config_path}: {exc}") from exc
    backends: dict[str, object] = {}
    for entry in doc.get("backends", []):
        entry = dict(entry)
        kind = entry.pop("kind", "http")
        if kind == "scripted":
            name = entry.get("name", "scripted")
            root = config_path.parent / entry.get("dir", "responses")
            backends[name] = ScriptedBackend(root, name=name,
                                             rate_limit=entry.get("rate_limit", 600_000))
        elif kind == "http":
            spec = BackendSpec(**entry)
            backends[spec.name] = HttpBackend(spec)
        else:
            raise BackendConfigError(f"unknown backend kind {kind!r}")
    if not backends:
        raise BackendConfigError(f"no backends defined in {config_path}")
    return backends
