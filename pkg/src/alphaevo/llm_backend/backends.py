"""Chat-completion backend interface and the HTTP implementation.

The remote backend speaks the common chat-completion wire format: POST a
JSON body with ``model``, ``messages`` and ``temperature`` to the
configured endpoint with a bearer token read from an environment
variable. Transient failures (timeouts, connection errors, 5xx, 429)
retry with exponential backoff; authentication failures never retry.

Every call produces one structured record handed to a sink callable, so
the orchestrating loop controls record ordering in the run log. The
credential is scrubbed from records before they leave this module.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import requests

from ..runlog import SCRUB_PLACEHOLDER, RunLog

__all__ = [
    "ChatExchange",
    "BackendConfig",
    "BackendError",
    "AuthenticationError",
    "BackendTimeoutError",
    "ExhaustedRetriesError",
    "BackendProtocolError",
    "Backend",
    "RemoteBackend",
    "make_backend",
]

Sink = Callable[[dict], None]


class BackendError(Exception):
    """Base class for backend failures."""


class AuthenticationError(BackendError):
    """Missing or rejected credential; never retried."""


class BackendTimeoutError(BackendError):
    """The final transport attempt timed out."""


class ExhaustedRetriesError(BackendError):
    """All transport attempts failed with transient errors."""


class BackendProtocolError(BackendError):
    """The server replied with a body the wire format does not allow."""


@dataclass(frozen=True)
class ChatExchange:
    """One prompt to complete, with its transport attempt budget."""

    system_text: str
    user_text: str
    temperature: float = 1.0
    max_attempts: int = 3
    purpose: str = "general"

    def __post_init__(self):
        if not self.system_text.strip() or not self.user_text.strip():
            raise ValueError("prompts must be non-empty")
        if not 1 <= self.max_attempts <= 5:
            raise ValueError("max_attempts must be in [1, 5]")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "remote" | "mock"
    endpoint: str | None = None
    model: str | None = None
    credential_env: str = "ALPHAEVO_API_KEY"
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    script_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and (not self.endpoint or not self.model):
            raise ValueError("remote backend requires endpoint and model")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def to_dict(self) -> dict:
        # Only the env var *name* is configuration; its value never leaves
        # the process environment.
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "credential_env": self.credential_env,
            "timeout": self.timeout,
            "max_attempts": self.max_attempts,
            "backoff_base": self.backoff_base,
            "max_in_flight": self.max_in_flight,
            "script_path": self.script_path,
        }


class Backend(Protocol):
    def complete(self, exchange: ChatExchange, sink: Sink | None = None) -> str: ...


class RemoteBackend:
    """Chat-completion HTTP client with bounded in-flight requests."""

    def __init__(self, config: BackendConfig, log: RunLog | None = None):
        if config.kind != "remote":
            raise ValueError("RemoteBackend requires a remote-kind config")
        token = os.environ.get(config.credential_env, "")
        if not token:
            raise AuthenticationError(
                f"credential environment variable {config.credential_env} is not set"
            )
        self.config = config
        self._token = token
        self._gate = threading.Semaphore(config.max_in_flight)
        self._session = requests.Session()
        self._default_sink: Sink | None = log.append_record if log else None
        if log is not None:
            log.register_secret(token)

    def complete(self, exchange: ChatExchange, sink: Sink | None = None) -> str:
        attempts = min(exchange.max_attempts, self.config.max_attempts)
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": exchange.system_text},
                {"role": "user", "content": exchange.user_text},
            ],
            "temperature": exchange.temperature,
        }
        started = time.monotonic()
        last_exc: Exception | None = None
        timed_out = False
        for attempt in range(1, attempts + 1):
            try:
                with self._gate:
                    response = self._session.post(
                        self.config.endpoint,
                        json=body,
                        headers={"Authorization": f"Bearer {self._token}"},
                        timeout=self.config.timeout,
                    )
            except requests.Timeout as exc:
                last_exc, timed_out = exc, True
            except requests.RequestException as exc:
                last_exc, timed_out = exc, False
            else:
                if response.status_code in (401, 403):
                    error = AuthenticationError(
                        f"server rejected credential (HTTP {response.status_code})"
                    )
                    self._record(exchange, None, attempt, started, error, sink)
                    raise error
                if response.status_code >= 400:
                    last_exc = BackendError(f"HTTP {response.status_code}")
                    timed_out = False
                else:
                    try:
                        text = response.json()["choices"][0]["message"]["content"]
                        if not isinstance(text, str):
                            raise TypeError("content is not a string")
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        error = BackendProtocolError(f"malformed completion body: {exc}")
                        self._record(exchange, None, attempt, started, error, sink)
                        raise error from exc
                    self._record(exchange, text, attempt, started, None, sink)
                    return text
            if attempt < attempts:
                time.sleep(self.config.backoff_base * (2 ** (attempt - 1)))
        error_type = BackendTimeoutError if timed_out else ExhaustedRetriesError
        error = error_type(f"no success after {attempts} attempts: {last_exc}")
        self._record(exchange, None, attempts, started, error, sink)
        raise error from last_exc

    def _record(
        self,
        exchange: ChatExchange,
        response: str | None,
        attempts: int,
        started: float,
        error: Exception | None,
        sink: Sink | None,
    ) -> None:
        record = {
            "kind": "llm_call",
            "backend": "remote",
            "purpose": exchange.purpose,
            "temperature": exchange.temperature,
            "system": self._scrub(exchange.system_text),
            "user": self._scrub(exchange.user_text),
            "response": self._scrub(response) if response is not None else None,
            "ok": error is None,
            "error": self._scrub(str(error)) if error is not None else None,
            "transport_attempts": attempts,
            "latency_ms": round((time.monotonic() - started) * 1000.0, 3),
        }
        sink = sink or self._default_sink
        if sink is not None:
            sink(record)

    def _scrub(self, text: str) -> str:
        return text.replace(self._token, SCRUB_PLACEHOLDER)


def make_backend(config: BackendConfig, log: RunLog | None = None) -> Backend:
    """Instantiate the backend named by the config."""
    if config.kind == "remote":
        return RemoteBackend(config, log)
    from .mock import MockBackend, MockScript

    script = MockScript.from_file(config.script_path) if config.script_path else None
    return MockBackend(script, log)
