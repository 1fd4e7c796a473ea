"""Pluggable text-generation backends and structured-output extraction.

Two backends share one interface: an HTTP client for chat-completion
endpoints and a scripted mock whose replies are a pure function of the
prompt, so seeded runs replay byte for byte without network access.
"""

from .backends import (
    AuthenticationError,
    BackendConfig,
    BackendError,
    BackendProtocolError,
    BackendTimeoutError,
    ChatExchange,
    ExhaustedRetriesError,
    RemoteBackend,
    make_backend,
)
from .extract import (
    ExtractionError,
    NoExpressionFoundError,
    NoTreeFoundError,
    TreeInvalidError,
    extract_all_trees,
    extract_expression,
    extract_tree,
)
from .mock import MockBackend, MockScript, ReplayBackend, replay_backend_from_log
from .prompts import (
    GENERATIVE_TEMPERATURE,
    GROUNDING_TEMPERATURE,
    PROMPT_KINDS,
    PromptLibrary,
)

__all__ = [
    "AuthenticationError",
    "BackendConfig",
    "BackendError",
    "BackendProtocolError",
    "BackendTimeoutError",
    "ChatExchange",
    "ExhaustedRetriesError",
    "RemoteBackend",
    "MockBackend",
    "MockScript",
    "ReplayBackend",
    "replay_backend_from_log",
    "make_backend",
    "ExtractionError",
    "NoExpressionFoundError",
    "NoTreeFoundError",
    "TreeInvalidError",
    "extract_tree",
    "extract_all_trees",
    "extract_expression",
    "PromptLibrary",
    "PROMPT_KINDS",
    "GENERATIVE_TEMPERATURE",
    "GROUNDING_TEMPERATURE",
]
