"""Minimal OpenAI-compatible chat-completions client.

Speaks the ``POST {base_url}/chat/completions`` protocol with bearer-token
auth read from a named environment variable (the key itself is never stored,
logged, or echoed in errors).  Transient failures (HTTP 429, 5xx, network
timeouts) are retried with exponential backoff and jitter under a hard
ceiling on total sleep time; all other HTTP errors fail fast.  The transport
is injectable, and two deterministic mocks ship here so every pipeline can
run byte-reproducibly without a network.
"""
from __future__ import annotations

import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import requests

from critloop.critique import Critique, Problem, Solution

logger = logging.getLogger(__name__)

_VALID_ROLES = ("system", "user", "assistant")


class ClientError(Exception):
    """Base class for chat-client failures."""


class AuthError(ClientError):
    """The endpoint rejected our credentials (HTTP 401/403)."""


class RateLimited(ClientError):
    """Still throttled (HTTP 429) after exhausting retries."""


class TransportError(ClientError):
    """Network failure or non-retryable/persistent HTTP error."""


class MalformedResponse(ClientError):
    """A 200 response that does not carry choices[0].message.content."""


class NoCodeBlock(ClientError):
    """The model's reply contains no fenced code block."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _VALID_ROLES:
            raise ValueError(f"role must be one of {_VALID_ROLES}, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be nonempty")


@dataclass(frozen=True)
class GenParams:
    model: str
    temperature: float = 0.7
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.model:
            raise ValueError("model must be nonempty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach one OpenAI-compatible endpoint.

    ``api_key_env_var`` names the environment variable holding the key; the
    config object itself never carries the secret.
    """

    base_url: str
    api_key_env_var: str = ""
    timeout_ms: int = 30000
    max_retries: int = 3
    backoff_base_ms: int = 250
    backoff_multiplier: float = 2.0
    backoff_jitter_ms: int = 100
    max_total_backoff_ms: int = 10000

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be nonempty")
        if self.timeout_ms <= 0 or self.max_retries < 0:
            raise ValueError("timeout_ms must be positive and max_retries >= 0")
        if self.backoff_base_ms < 0 or self.backoff_jitter_ms < 0 or self.max_total_backoff_ms < 0:
            raise ValueError("backoff settings must be nonnegative")
        if self.backoff_multiplier < 1.0:
            raise ValueError("backoff_multiplier must be >= 1")


@dataclass
class TransportReply:
    """What a transport hands back: an HTTP status and decoded JSON body,
    or status 0 with an error tag for network-level failures."""

    status: int
    body: Optional[object] = None
    error: Optional[str] = None


Transport = Callable[[str, dict, dict, float], TransportReply]


def http_transport(url: str, headers: dict, payload: dict, timeout_s: float) -> TransportReply:
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
    except requests.RequestException as exc:
        # Deliberately only the exception type: request internals may echo
        # headers, and the auth header must never surface.
        return TransportReply(status=0, error=type(exc).__name__)
    try:
        body = resp.json()
    except ValueError:
        body = None
    return TransportReply(status=resp.status_code, body=body)


class ConcurrencyLimiter:
    """Bounds in-flight requests across threads sharing one endpoint."""

    def __init__(self, max_in_flight: int):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._sem = threading.Semaphore(max_in_flight)

    def __enter__(self) -> "ConcurrencyLimiter":
        self._sem.acquire()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self._sem.release()


def backoff_schedule(cfg: EndpointConfig, attempts: int, rng: random.Random) -> list[float]:
    """Sleep durations (seconds) before each retry; total is capped by the
    configured ceiling so no call ever sleeps unbounded."""
    delays = []
    budget_ms = float(cfg.max_total_backoff_ms)
    for k in range(attempts):
        raw = cfg.backoff_base_ms * (cfg.backoff_multiplier**k)
        raw += rng.uniform(0, cfg.backoff_jitter_ms)
        delay = min(raw, budget_ms)
        budget_ms -= delay
        delays.append(delay / 1000.0)
    return delays


_jitter_rng = random.Random()


def complete_chat(
    cfg: EndpointConfig,
    messages: Sequence[ChatMessage],
    params: GenParams,
    transport: Optional[Transport] = None,
    limiter: Optional[ConcurrencyLimiter] = None,
) -> str:
    """POST one chat completion and return choices[0].message.content.

    Retries 429, 5xx and network-level failures with backoff; 401/403 raise
    AuthError immediately and any other 4xx raises TransportError without a
    retry.  A 200 body missing the expected shape raises MalformedResponse.
    """
    if not messages:
        raise ValueError("messages must be nonempty")
    transport = transport or http_transport
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if cfg.api_key_env_var:
        key = os.environ.get(cfg.api_key_env_var)
        if key:
            headers["Authorization"] = f"Bearer {key}"
    payload = {
        "model": params.model,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    }
    delays = backoff_schedule(cfg, cfg.max_retries, _jitter_rng)
    last_failure = "no attempt made"
    for attempt in range(cfg.max_retries + 1):
        if limiter is not None:
            with limiter:
                reply = transport(url, headers, payload, cfg.timeout_ms / 1000.0)
        else:
            reply = transport(url, headers, payload, cfg.timeout_ms / 1000.0)

        if reply.status == 200:
            return _extract_content(reply.body, url)
        if reply.status in (401, 403):
            raise AuthError(f"HTTP {reply.status} from {url}: credentials rejected")
        if reply.status == 429 or reply.status >= 500 or reply.status == 0:
            last_failure = (
                f"HTTP {reply.status}" if reply.status else f"network failure ({reply.error})"
            )
            if attempt < cfg.max_retries:
                logger.debug("retrying %s after %s (attempt %d)", url, last_failure, attempt + 1)
                if delays[attempt] > 0:
                    time.sleep(delays[attempt])
                continue
            if reply.status == 429:
                raise RateLimited(f"still rate-limited by {url} after {attempt + 1} attempts")
            raise TransportError(f"{last_failure} from {url} after {attempt + 1} attempts")
        raise TransportError(f"HTTP {reply.status} from {url} (not retryable)")
    raise TransportError(f"{last_failure} from {url}")  # pragma: no cover - loop always exits


def _extract_content(body: object, url: str) -> str:
    try:
        content = body["choices"][0]["message"]["content"]  # type: ignore[index]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected response shape from {url}: {exc!r}") from exc
    if not isinstance(content, str):
        raise MalformedResponse(f"response content from {url} is not text")
    return content


# -- deterministic mocks -----------------------------------------------------

def chat_body(text: str) -> dict:
    """A minimal OpenAI-style 200 body carrying ``text``."""
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class MockTransport:
    """Scripted transport: replies are consumed in order.

    Script items may be plain strings (a 200 chat body), integers (an HTTP
    status with empty body), or TransportReply objects.  Every call is
    recorded in ``self.calls`` for assertions.
    """

    def __init__(self, script: Sequence[Union[str, int, TransportReply]]):
        self._script = list(script)
        self._lock = threading.Lock()
        self.calls: list[dict] = []

    def __call__(self, url: str, headers: dict, payload: dict, timeout_s: float) -> TransportReply:
        with self._lock:
            self.calls.append({"url": url, "headers": dict(headers), "payload": payload})
            if not self._script:
                raise AssertionError("MockTransport script exhausted")
            item = self._script.pop(0)
        if isinstance(item, str):
            return TransportReply(status=200, body=chat_body(item))
        if isinstance(item, int):
            return TransportReply(status=item, body={})
        return item


class KeyedMockTransport:
    """Deterministic mock keyed on request content.

    The reply is computed from the payload alone, so concurrent callers get
    identical answers regardless of scheduling -- this is what makes mocked
    pipelines reproducible across worker counts.
    """

    def __init__(self, reply_fn: Callable[[dict], str]):
        self._reply_fn = reply_fn
        self._lock = threading.Lock()
        self.calls: list[dict] = []

    def __call__(self, url: str, headers: dict, payload: dict, timeout_s: float) -> TransportReply:
        with self._lock:
            self.calls.append({"url": url, "payload": payload})
        return TransportReply(status=200, body=chat_body(self._reply_fn(payload)))


# -- role-level helpers ------------------------------------------------------

@dataclass(frozen=True)
class RoleConfig:
    """An endpoint plus the sampling settings one pipeline role uses."""

    endpoint: EndpointConfig
    model: str
    temperature: float = 0.7
    max_tokens: int = 1024
    transport: Optional[Transport] = field(default=None, compare=False)
    limiter: Optional[ConcurrencyLimiter] = field(default=None, compare=False)


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_code_block(text: str) -> str:
    """First fenced code block, fence language tag ignored."""
    match = _FENCE_RE.search(text)
    if match is None:
        raise NoCodeBlock("reply contains no fenced code block")
    return match.group(1).rstrip("\n")


def generate_solution(problem: Problem, role: RoleConfig) -> Solution:
    """Sample a zero-shot draft for ``problem`` from the generator role."""
    params = GenParams(model=role.model, temperature=role.temperature, max_tokens=role.max_tokens)
    text = complete_chat(
        role.endpoint,
        [ChatMessage(role="user", content=problem.description)],
        params,
        transport=role.transport,
        limiter=role.limiter,
    )
    return Solution(source=extract_code_block(text), round=0)


def revise_solution(
    problem: Problem,
    draft: Solution,
    critique: Union[Critique, str],
    role: RoleConfig,
) -> Solution:
    """Ask the generator to revise ``draft`` given a critique.

    The conversation is exactly three messages -- problem, the latest draft
    as the assistant turn, critique text -- and decoding is greedy
    (temperature 0); later rounds reuse the same shape rather than growing
    the context.
    """
    critique_text = critique.raw if isinstance(critique, Critique) else critique
    if not critique_text.strip():
        raise ValueError("critique text must be nonempty")
    params = GenParams(model=role.model, temperature=0.0, max_tokens=role.max_tokens)
    messages = [
        ChatMessage(role="user", content=problem.description),
        ChatMessage(role="assistant", content=f"```\n{draft.source}\n```"),
        ChatMessage(role="user", content=critique_text),
    ]
    text = complete_chat(
        role.endpoint, messages, params, transport=role.transport, limiter=role.limiter
    )
    return Solution(source=extract_code_block(text), round=draft.round + 1)


def complete_for_role(role: RoleConfig, messages: Sequence[ChatMessage]) -> str:
    """One completion under a role's endpoint and sampling settings."""
    params = GenParams(model=role.model, temperature=role.temperature, max_tokens=role.max_tokens)
    return complete_chat(
        role.endpoint, messages, params, transport=role.transport, limiter=role.limiter
    )
