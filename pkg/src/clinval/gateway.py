"""Chat-completions client: OpenAI-compatible HTTP, scripted mocks, retries, bounded parallelism."""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Protocol, Sequence, Union
from urllib.parse import urlparse

import httpx

from .prompting import ParseError, PromptMessages

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class GatewayError(Exception):
    """Base class for failures surfaced by the gateway."""


class BackendHTTPError(GatewayError):
    def __init__(self, status: int, message: str = "", code: str | None = None):
        super().__init__(f"HTTP {status}: {message}" if message else f"HTTP {status}")
        self.status = status
        self.message = message
        self.code = code

    @property
    def retryable(self) -> bool:
        return self.status in RETRYABLE_STATUS or self.status >= 500


class TransportFailure(GatewayError):
    """Connection-level failure (DNS, reset, timeout)."""


class AuthError(GatewayError):
    pass


class ContextLengthExceeded(GatewayError):
    pass


class ExhaustedRetries(GatewayError):
    def __init__(self, attempts: int, cause: BaseException):
        super().__init__(f"gave up after {attempts} attempts: {type(cause).__name__}: {cause}")
        self.attempts = attempts
        self.cause = cause


@dataclass(frozen=True)
class GenParams:
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ModelEndpoint:
    """One chat-completions deployment. ``api_key_ref`` names an env var, never the key."""

    name: str
    base_url: str
    model_id: str
    api_key_ref: str | None = None
    gen_params: GenParams = field(default_factory=GenParams)

    def __post_init__(self) -> None:
        url = urlparse(self.base_url)
        if url.scheme not in {"http", "https", "mock"} or not url.netloc:
            raise ValueError(f"endpoint {self.name!r}: malformed base_url {self.base_url!r}")
        if not self.model_id.strip():
            raise ValueError(f"endpoint {self.name!r}: model_id must be non-empty")

    @property
    def scheme(self) -> str:
        return urlparse(self.base_url).scheme

    def api_key(self) -> str | None:
        if self.api_key_ref is None:
            return None
        key = os.environ.get(self.api_key_ref)
        if not key:
            raise AuthError(f"endpoint {self.name!r}: environment variable {self.api_key_ref} is not set")
        return key

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_url": self.base_url,
            "model_id": self.model_id,
            "api_key_ref": self.api_key_ref,
            "temperature": self.gen_params.temperature,
            "max_tokens": self.gen_params.max_tokens,
        }


@dataclass(frozen=True)
class CompletionResult:
    text: str
    request_id: str
    latency_ms: int
    attempt_count: int


class Transport(Protocol):
    def send(self, endpoint: ModelEndpoint, payload: dict, api_key: str | None) -> dict: ...


def build_payload(endpoint: ModelEndpoint, messages: PromptMessages) -> dict:
    return {
        "model": endpoint.model_id,
        "messages": messages.to_list(),
        "temperature": endpoint.gen_params.temperature,
        "max_tokens": endpoint.gen_params.max_tokens,
    }


def first_choice_text(body: dict) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendHTTPError(502, f"malformed completion body: {exc!r}") from exc
    return content or ""


class HttpTransport:
    """POST ``{base_url}/chat/completions`` with an OpenAI-shaped body."""

    def __init__(self, timeout: float = 120.0, client: httpx.Client | None = None):
        self._client = client or httpx.Client(timeout=timeout)

    def send(self, endpoint: ModelEndpoint, payload: dict, api_key: str | None) -> dict:
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = self._client.post(url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise TransportFailure(str(exc)) from exc
        if resp.status_code >= 400:
            message, code = "", None
            try:
                err = resp.json().get("error") or {}
                if isinstance(err, dict):
                    message, code = err.get("message", ""), err.get("code")
                else:
                    message = str(err)
            except (ValueError, AttributeError):
                message = resp.text[:200]
            raise BackendHTTPError(resp.status_code, message, code)
        return resp.json()

    def close(self) -> None:
        self._client.close()


ScriptItem = Union[str, int, BaseException]
Responder = Callable[[list[dict]], ScriptItem]


class MockBackend:
    """Offline stand-in for an endpoint.

    Either replays ``script`` (strings are completions, ints are HTTP error
    statuses, exceptions are raised) or calls ``responder(messages)`` per
    request. ``peak_in_flight`` records the observed concurrency.
    """

    def __init__(
        self,
        script: Sequence[ScriptItem] | None = None,
        responder: Responder | None = None,
        latency: float = 0.0,
    ):
        if (script is None) == (responder is None):
            raise ValueError("give exactly one of script or responder")
        self._script = list(script) if script is not None else None
        self._responder = responder
        self.latency = latency
        self.calls: list[dict] = []
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    def send(self, endpoint: ModelEndpoint, payload: dict, api_key: str | None) -> dict:
        with self._lock:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            self.calls.append(payload)
            n = len(self.calls)
            if self._script is not None:
                item = self._script[min(n - 1, len(self._script) - 1)]
        try:
            if self.latency:
                time.sleep(self.latency)
            if self._responder is not None:
                item = self._responder(payload["messages"])
            if isinstance(item, BaseException):
                raise item
            if isinstance(item, int):
                if item == 400:
                    raise BackendHTTPError(400, "maximum context length exceeded", "context_length_exceeded")
                raise BackendHTTPError(item, "scripted failure")
            return {"id": f"mock-{endpoint.name}-{n}", "choices": [{"message": {"role": "assistant", "content": item}}]}
        finally:
            with self._lock:
                self.in_flight -= 1


def _classify(exc: BaseException) -> BaseException:
    if isinstance(exc, BackendHTTPError):
        if exc.status in (401, 403):
            return AuthError(str(exc))
        text = f"{exc.code or ''} {exc.message}".lower()
        if exc.status == 413 or "context_length" in text or "context length" in text:
            return ContextLengthExceeded(str(exc))
    return exc


def _is_retryable(exc: BaseException) -> bool:
    if isinstance(exc, (TransportFailure, ParseError)):
        return True
    return isinstance(exc, BackendHTTPError) and exc.retryable


Key = Hashable


class Gateway:
    """Sends prompts to endpoints, retrying transient failures.

    ``check`` callbacks passed to :meth:`complete` may raise
    :class:`~clinval.prompting.ParseError` to ask the model again.
    """

    def __init__(
        self,
        *,
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 16.0,
        jitter: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
        audit_path: str | os.PathLike | None = None,
        http: Transport | None = None,
        seed: int | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if not 0.0 <= jitter <= 1.0:
            raise ValueError("jitter must be within [0, 1]")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.jitter = jitter
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._http = http
        self._mocks: dict[str, MockBackend] = {}
        self._lock = threading.Lock()
        self._audit_path = audit_path
        self.delays: list[tuple[Key, float]] = []

    def register_mock(self, name: str, backend: MockBackend) -> None:
        self._mocks[name] = backend

    def transport_for(self, endpoint: ModelEndpoint) -> Transport:
        if endpoint.scheme == "mock":
            host = urlparse(endpoint.base_url).netloc
            try:
                return self._mocks[host]
            except KeyError:
                raise GatewayError(f"no mock backend registered as {host!r}") from None
        if self._http is None:
            self._http = HttpTransport()
        return self._http

    def backoff_delays(self) -> Iterable[float]:
        """Delay before each retry: exponential, jittered, never decreasing."""
        prev = 0.0
        k = 0
        while True:
            base = min(self.backoff_cap, self.backoff_base * 2**k)
            d = max(prev, base * (1.0 + self.jitter * self._rng.random()))
            prev = d
            k += 1
            yield d

    def complete(
        self,
        endpoint: ModelEndpoint,
        messages: PromptMessages,
        check: Callable[[str], object] | None = None,
        key: Key = None,
    ) -> CompletionResult:
        if not messages.messages:
            raise ValueError("empty prompt")
        api_key = endpoint.api_key()
        transport = self.transport_for(endpoint)
        payload = build_payload(endpoint, messages)
        delays = iter(self.backoff_delays())
        start = time.monotonic()
        last: BaseException | None = None
        attempt = 0
        try:
            for attempt in range(1, self.max_attempts + 1):
                try:
                    body = transport.send(endpoint, payload, api_key)
                    text = first_choice_text(body)
                    if check is not None:
                        check(text)
                except Exception as exc:  # noqa: BLE001 - classified below
                    exc = _classify(exc)
                    if not _is_retryable(exc):
                        last = exc
                        raise exc
                    last = exc
                    if attempt < self.max_attempts:
                        d = next(delays)
                        with self._lock:
                            self.delays.append((key, d))
                        self._sleep(d)
                    continue
                latency = int((time.monotonic() - start) * 1000)
                last = None
                return CompletionResult(text, str(body.get("id", "")), latency, attempt)
            raise ExhaustedRetries(attempt, last)
        finally:
            self._audit(key, endpoint, start, attempt, last)

    def complete_many(
        self,
        endpoint: ModelEndpoint,
        batch: Sequence[tuple[Key, PromptMessages]],
        parallelism: int = 4,
        check: Callable[[str], object] | None = None,
    ) -> dict[Key, CompletionResult | GatewayError]:
        """Complete every prompt; failures are returned per key, never raised."""
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        keys = [k for k, _ in batch]
        if len(set(keys)) != len(keys):
            raise ValueError("batch keys must be unique")
        if not batch:
            return {}

        def one(item: tuple[Key, PromptMessages]):
            k, msgs = item
            try:
                return self.complete(endpoint, msgs, check=check, key=k)
            except GatewayError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, batch))
        return dict(zip(keys, results))

    def _audit(self, key: Key, endpoint: ModelEndpoint, start: float, attempts: int, error: BaseException | None) -> None:
        line = {
            "key": None if key is None else str(key),
            "endpoint": endpoint.name,
            "latency_ms": int((time.monotonic() - start) * 1000),
            "attempts": attempts,
            "error": type(error).__name__ if error is not None else None,
        }
        log.debug("completion %s", line)
        if self._audit_path is None:
            return
        with self._lock, open(self._audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(line) + "\n")
