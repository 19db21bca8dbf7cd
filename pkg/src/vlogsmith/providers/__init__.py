from .base import (
    AuthError,
    ChatModel,
    ChatRequest,
    ChatResponse,
    ConfigError,
    MalformedOutput,
    Part,
    PreconditionError,
    ProviderConfig,
    ProviderError,
    ProviderRejected,
    ProviderSet,
    ProviderTimeout,
    RetryPolicy,
    TokenBucket,
    TransportError,
    call_with_retry,
)
from .mock import MockChatModel, mock_providers

__all__ = [
    "AuthError",
    "ChatModel",
    "ChatRequest",
    "ChatResponse",
    "ConfigError",
    "MalformedOutput",
    "MockChatModel",
    "Part",
    "PreconditionError",
    "ProviderConfig",
    "ProviderError",
    "ProviderRejected",
    "ProviderSet",
    "ProviderTimeout",
    "RetryPolicy",
    "TokenBucket",
    "TransportError",
    "call_with_retry",
    "mock_providers",
]
