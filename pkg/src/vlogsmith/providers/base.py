"""Provider-facing interfaces, request types, errors, retry and rate limiting."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence, TypeVar, runtime_checkable

from ..domain import AssetRef

T = TypeVar("T")


class ProviderError(RuntimeError):
    retryable = False


class TransportError(ProviderError):
    retryable = True


class ProviderTimeout(ProviderError):
    retryable = True


class AuthError(ProviderError):
    pass


class ProviderRejected(ProviderError):
    pass


class MalformedOutput(ProviderError):
    """The provider answered, but not with what was asked for."""


class PreconditionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 0.5
    backoff_max: float = 8.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ConfigError("retry.max_attempts must be >= 1")
        if self.backoff < 0:
            raise ConfigError("retry.backoff must be >= 0")

    def delay(self, attempt: int) -> float:
        return min(self.backoff * (2 ** (attempt - 1)), self.backoff_max)


def call_with_retry(
    fn: Callable[[], T],
    policy: RetryPolicy,
    *,
    sleep: Callable[[float], None] = time.sleep,
    on_retry: Callable[[int, ProviderError], None] | None = None,
) -> T:
    """Call ``fn``; retry retryable provider errors up to ``policy.max_attempts`` total."""
    attempt = 1
    while True:
        try:
            return fn()
        except ProviderError as exc:
            if not exc.retryable or attempt >= policy.max_attempts:
                raise
            if on_retry is not None:
                on_retry(attempt, exc)
            sleep(policy.delay(attempt))
            attempt += 1


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, at most ``burst`` banked."""

    def __init__(
        self,
        rate: float,
        burst: int = 1,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0 or burst < 1:
            raise ConfigError("token bucket needs rate > 0 and burst >= 1")
        self.rate = rate
        self.burst = burst
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(burst)
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass(frozen=True)
class ProviderConfig:
    name: str = "mock"
    endpoint: str = ""
    model_name: str = ""
    auth_env: str = ""
    timeout: float = 120.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    rate_per_second: Optional[float] = None
    burst: int = 1
    # image edit knobs
    inference_steps: int = 20
    guidance_scale: float = 3.5
    width: int = 768
    height: int = 1360
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.inference_steps < 1:
            raise ConfigError("inference_steps must be >= 1")
        if not self.guidance_scale > 0:
            raise ConfigError("guidance_scale must be > 0")
        if not self.timeout > 0:
            raise ConfigError("timeout must be > 0")
        if self.width < 1 or self.height < 1:
            raise ConfigError("width and height must be positive")


@dataclass(frozen=True)
class Part:
    """One entry of a chat request: text, one image, or one video clip."""

    text: Optional[str] = None
    image: Optional[AssetRef] = None
    video: Optional[AssetRef] = None

    def __post_init__(self) -> None:
        if sum(x is not None for x in (self.text, self.image, self.video)) != 1:
            raise PreconditionError("a part carries exactly one of text, image or video")
        if self.image is not None and self.image.kind != "image":
            raise PreconditionError("image parts must reference image assets")
        if self.video is not None and self.video.kind != "video":
            raise PreconditionError("video parts must reference video assets")


@dataclass(frozen=True)
class ChatRequest:
    """One whole-response chat call.

    ``route`` names the calling agent role (``story.generator``,
    ``image_quality`` ...). ``hints`` are never sent over the wire; offline
    providers may use them to shape synthetic replies.
    """

    system: str
    parts: tuple[Part, ...]
    schema_id: str = ""
    route: str = ""
    hints: Mapping[str, Any] = field(default_factory=dict)

    def text(self) -> str:
        return "\n\n".join(p.text for p in self.parts if p.text is not None)

    def images(self) -> list[AssetRef]:
        return [p.image for p in self.parts if p.image is not None]

    def media(self) -> list[AssetRef]:
        return [p.image or p.video for p in self.parts if p.text is None]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model: str
    latency_s: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0


def check_chat_request(request: ChatRequest) -> None:
    if not request.parts:
        raise PreconditionError("chat request needs at least one part")


@runtime_checkable
class ChatModel(Protocol):
    name: str

    def chat(self, request: ChatRequest) -> ChatResponse: ...


class ImageEditor(Protocol):
    name: str

    def edit_image(self, prompt: str, reference: AssetRef, *, context: Sequence[str] = ()) -> AssetRef: ...


class VideoGenerator(Protocol):
    name: str

    def image_to_video(self, prompt: str, keyframe: AssetRef) -> AssetRef: ...


class MusicGenerator(Protocol):
    name: str

    def text_to_music(self, prompt: str) -> AssetRef: ...


class SpeechSynthesizer(Protocol):
    name: str

    def text_to_speech(self, text: str, voice_reference: AssetRef | None = None) -> AssetRef: ...


class Embedder(Protocol):
    name: str
    dim: int

    def embed_image(self, asset: AssetRef) -> list[float]: ...

    def embed_text(self, text: str) -> list[float]: ...


class PoseEstimator(Protocol):
    name: str

    def estimate_pose(self, asset: AssetRef) -> list[tuple[float, float]]: ...


class VideoAnalyzer(Protocol):
    """Frame-level signals the video metrics are computed from."""

    name: str

    def estimate_flow(self, video: AssetRef) -> list[float]: ...

    def score_frames(self, video: AssetRef, criterion: str) -> list[float]: ...

    def embed_frames(self, video: AssetRef, space: str) -> list[list[float]]: ...

    def interpolation_smoothness(self, video: AssetRef) -> float | None: ...


FRAME_CRITERIA = ("aesthetic", "imaging")
FRAME_SPACES = ("subject", "background")


@dataclass
class ProviderSet:
    """Everything the engine talks to. ``chat_models`` maps agent routes to
    models; routes without an entry use ``chat``."""

    chat: ChatModel
    image_editor: ImageEditor
    video_generator: VideoGenerator
    music: MusicGenerator
    speech: SpeechSynthesizer
    embedder: Embedder
    pose: PoseEstimator
    video_analyzer: VideoAnalyzer
    chat_models: dict[str, ChatModel] = field(default_factory=dict)

    def chat_for(self, route: str) -> ChatModel:
        if route in self.chat_models:
            return self.chat_models[route]
        head = route.split(".", 1)[0]
        return self.chat_models.get(head, self.chat)

    def identities(self) -> list[tuple[str, str]]:
        pairs = [
            ("chat", self.chat.name),
            ("image_edit", self.image_editor.name),
            ("image_to_video", self.video_generator.name),
            ("text_to_music", self.music.name),
            ("text_to_speech", self.speech.name),
            ("embedder", self.embedder.name),
            ("pose", self.pose.name),
            ("video_analyzer", self.video_analyzer.name),
        ]
        pairs += [(f"chat:{route}", model.name) for route, model in sorted(self.chat_models.items())]
        return pairs
