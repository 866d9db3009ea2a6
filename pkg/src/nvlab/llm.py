"""Minimal chat-completions HTTP client.

Targets any endpoint speaking the standard chat wire format: POST a JSON body
``{"model", "messages", "temperature"}`` and read
``choices[0].message.content`` plus an optional ``usage`` block back. The
endpoint URL, model name and credential come from configuration and the
environment, never from code.

Transient failures (HTTP 429/5xx, connection errors, timeouts) are retried
with exponential backoff; auth and request-shape errors (4xx) surface
immediately. A token bucket smooths bursts and an optional per-run request
budget hard-stops runaway spend. Every request is logged with timestamps,
retry count and token usage.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

log = logging.getLogger(__name__)

RETRYABLE_STATUS = (429, 500, 502, 503, 504)


class TransportError(RuntimeError):
    """The endpoint could not be reached or kept failing after retries."""


class AuthError(TransportError):
    """Credential was rejected; retrying cannot help."""


class BudgetExceededError(TransportError):
    """The per-run request budget is exhausted."""


@dataclass
class ChatResult:
    text: str
    usage: dict | None
    retries: int


class TokenBucket:
    """Thread-safe token bucket; acquire() blocks until a token is available."""

    def __init__(self, rate_per_second: float, capacity: float | None = None,
                 clock=time.monotonic, sleeper=time.sleep):
        if rate_per_second <= 0:
            raise ValueError("rate_per_second must be positive")
        self.rate = rate_per_second
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_second)
        self._tokens = self.capacity
        self._clock = clock
        self._sleeper = sleeper
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Take one token, sleeping as needed. Returns seconds waited."""
        waited = 0.0
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return waited
                shortfall = (1.0 - self._tokens) / self.rate
            self._sleeper(shortfall)
            waited += shortfall


class ChatClient:
    """One configured connection to a chat-completions endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 1.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 120.0,
        rate_limiter: TokenBucket | None = None,
        request_budget: int | None = None,
        sleeper=time.sleep,
        opener=None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.rate_limiter = rate_limiter
        self._budget = request_budget
        self._budget_lock = threading.Lock()
        self._sleeper = sleeper
        self._opener = opener or urllib.request.urlopen
        self.requests_sent = 0

    def _spend_budget(self):
        with self._budget_lock:
            if self._budget is not None:
                if self._budget <= 0:
                    raise BudgetExceededError("per-run request budget exhausted")
                self._budget -= 1
            self.requests_sent += 1

    def _post(self, body: bytes):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        request = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        return self._opener(request, timeout=self.timeout)

    def chat(self, messages: list[dict]) -> ChatResult:
        """Send one completion request; retry transient failures with backoff."""
        body = json.dumps(
            {"model": self.model, "messages": messages, "temperature": self.temperature}
        ).encode("utf-8")

        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                delay = self.backoff_base * (2 ** (attempt - 1))
                log.info("retrying in %.2fs (attempt %d/%d): %s",
                         delay, attempt, self.max_retries, last_error)
                self._sleeper(delay)
            self._spend_budget()
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            started = time.time()
            try:
                with self._post(body) as response:
                    payload = json.loads(response.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                detail = f"HTTP {exc.code} from {self.endpoint}"
                if exc.code in (401, 403):
                    raise AuthError(f"credential rejected: {detail}") from exc
                if exc.code in RETRYABLE_STATUS:
                    last_error = detail
                    continue
                raise TransportError(detail) from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last_error = f"connection failure: {exc}"
                continue

            try:
                text = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
            if not isinstance(text, str) or not text:
                raise TransportError("empty completion text")
            usage = payload.get("usage")
            log.info(
                "chat ok model=%s elapsed=%.3fs retries=%d usage=%s",
                self.model, time.time() - started, attempt, usage,
            )
            return ChatResult(text=text, usage=usage, retries=attempt)

        raise TransportError(f"exhausted {self.max_retries} retries: {last_error}")
