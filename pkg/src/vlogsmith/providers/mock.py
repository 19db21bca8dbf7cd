"""Seeded, deterministic offline providers.

Mock media assets are small JSON documents that carry their own feature
seeds, so embeddings, flow and frame scores computed from them are stable
and meaningful without any model runtime. Every mock here is a pure function
of its inputs and seed; scripted chat replies are the one exception and are
consumed in call order per route.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from ..domain import IMAGE_ISSUES, STORYBOARD_DIMENSIONS, AssetRef
from ..store import AssetStore
from .base import (
    FRAME_CRITERIA,
    FRAME_SPACES,
    ChatRequest,
    ChatResponse,
    MalformedOutput,
    PreconditionError,
    ProviderConfig,
    ProviderSet,
    TransportError,
    check_chat_request,
)

MOCK_MAGIC = "vlogsmith-mock"
_WORD = re.compile(r"[a-z0-9]+")


def seed_int(*parts: Any) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def unit_uniform(*parts: Any) -> float:
    return seed_int(*parts) / 2.0**64


def gaussian_unit(seed: int, dim: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def _normalize(v: np.ndarray) -> list[float]:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise MalformedOutput("degenerate zero embedding")
    return [float(x) for x in v / n]


def encode_mock(payload: Mapping[str, Any]) -> bytes:
    body = {"magic": MOCK_MAGIC, **payload}
    return (json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n").encode()


def decode_mock(data: bytes) -> dict[str, Any] | None:
    if not data.startswith(b"{"):
        return None
    try:
        body = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if not isinstance(body, dict) or body.get("magic") != MOCK_MAGIC:
        return None
    return body


def speech_duration(text: str) -> float:
    return max(1.0, 0.06 * len(text.split()))


def _require_text(text: str, what: str) -> None:
    if not text or not text.strip():
        raise PreconditionError(f"{what} must be nonempty")


class _FailureSwitch:
    def __init__(self, fail: bool) -> None:
        self.fail = fail

    def check(self, name: str) -> None:
        if self.fail:
            raise TransportError(f"{name}: simulated outage")


# -- media -----------------------------------------------------------------


class MockImageEditor:
    """Edited image = identity anchor of the reference + prompt text + noise."""

    def __init__(self, store: AssetStore, config: ProviderConfig | None = None, seed: int = 0, *, fail: bool = False):
        self.store = store
        self.config = config or ProviderConfig()
        self.seed = seed
        self.name = "mock-image-edit"
        self._switch = _FailureSwitch(fail)
        self.calls = 0

    def edit_image(self, prompt: str, reference: AssetRef, *, context: Sequence[str] = ()) -> AssetRef:
        _require_text(prompt, "edit prompt")
        if reference.kind != "image":
            raise PreconditionError("edit_image needs an image reference")
        self._switch.check(self.name)
        self.calls += 1
        ref_data = self.store.get(reference)
        ref_mock = decode_mock(ref_data)
        if ref_mock is not None and ref_mock.get("kind") == "image":
            anchor = ref_mock["anchor_seed"]
        else:
            anchor = seed_int("image", reference.content_hash)
        cfg = self.config
        text = " ".join([prompt, *context])
        payload = {
            "kind": "image",
            "anchor_seed": anchor,
            "feature_seed": seed_int("edit", prompt, tuple(context), reference.content_hash, self.seed),
            "mix": [0.8, 0.45, 0.4],
            "text": text,
            "width": cfg.width,
            "height": cfg.height,
            "steps": cfg.inference_steps,
            "guidance": cfg.guidance_scale,
        }
        return self.store.put(encode_mock(payload), "image", width=cfg.width, height=cfg.height)


class MockVideoGenerator:
    def __init__(
        self,
        store: AssetStore,
        seed: int = 0,
        *,
        frames: int = 16,
        duration: float = 5.0,
        fail: bool = False,
    ):
        if frames < 3:
            raise ValueError("mock videos need at least 3 frames")
        self.store = store
        self.seed = seed
        self.frames = frames
        self.duration = duration
        self.name = "mock-i2v"
        self._switch = _FailureSwitch(fail)
        self.calls = 0

    def image_to_video(self, prompt: str, keyframe: AssetRef) -> AssetRef:
        _require_text(prompt, "video prompt")
        if keyframe.kind != "image":
            raise PreconditionError("image_to_video needs an image keyframe")
        self._switch.check(self.name)
        self.calls += 1
        self.store.verify(keyframe)
        rng = random.Random(seed_int("i2v", prompt, keyframe.content_hash, self.seed))
        change_rate = rng.uniform(0.15, 0.9)
        seeds = [rng.getrandbits(48)]
        for _ in range(self.frames - 1):
            seeds.append(rng.getrandbits(48) if rng.random() < change_rate else seeds[-1])
        payload = {
            "kind": "video",
            "base_seed": seed_int("video-base", keyframe.content_hash),
            "frame_seeds": seeds,
            "drift": round(rng.uniform(0.1, 0.6), 6),
            "motion": round(rng.uniform(0.02, 0.5), 6),
            "prompt": prompt,
        }
        return self.store.put(
            encode_mock(payload),
            "video",
            width=keyframe.width,
            height=keyframe.height,
            duration=self.duration,
        )


def make_mock_video(
    store: AssetStore,
    frame_seeds: Sequence[int],
    *,
    base_seed: int = 1,
    drift: float = 0.3,
    motion: float = 0.2,
    duration: float = 5.0,
    width: int = 768,
    height: int = 1360,
    prompt: str = "",
) -> AssetRef:
    """Build a mock video directly from frame seeds (tests, fixtures)."""
    payload = {
        "kind": "video",
        "base_seed": base_seed,
        "frame_seeds": list(frame_seeds),
        "drift": drift,
        "motion": motion,
        "prompt": prompt,
    }
    return store.put(encode_mock(payload), "video", width=width, height=height, duration=duration)


def make_mock_image(store: AssetStore, anchor_seed: int, text: str = "", *, feature_seed: int = 0,
                    width: int = 768, height: int = 1360) -> AssetRef:
    payload = {
        "kind": "image",
        "anchor_seed": anchor_seed,
        "feature_seed": feature_seed,
        "mix": [0.8, 0.45, 0.4],
        "text": text,
        "width": width,
        "height": height,
    }
    return store.put(encode_mock(payload), "image", width=width, height=height)


class _MockAudio:
    role = "audio"

    def __init__(self, store: AssetStore, seed: int = 0, *, fail: bool = False):
        self.store = store
        self.seed = seed
        self._switch = _FailureSwitch(fail)
        self.calls = 0

    def _make(self, text: str, voice: str) -> AssetRef:
        _require_text(text, "audio text")
        self._switch.check(self.name)
        self.calls += 1
        duration = speech_duration(text)
        payload = {"kind": "audio", "role": self.role, "text": text, "voice": voice, "seed": self.seed}
        return self.store.put(encode_mock(payload), "audio", duration=duration)


class MockMusicGenerator(_MockAudio):
    role = "music"
    name = "mock-t2m"

    def text_to_music(self, prompt: str) -> AssetRef:
        return self._make(prompt, "")


class MockSpeechSynthesizer(_MockAudio):
    role = "speech"
    name = "mock-tts"

    def text_to_speech(self, text: str, voice_reference: AssetRef | None = None) -> AssetRef:
        voice = voice_reference.content_hash if voice_reference is not None else "default"
        return self._make(text, voice)


# -- measurement -----------------------------------------------------------


class MockEmbedder:
    """Hash-seeded embeddings.

    Text embeds as a normalized bag of hashed word vectors, so overlapping
    texts correlate. Mock images mix their identity anchor, the text they
    were rendered from, and per-image noise. Anything else is seeded by its
    content hash. ``overrides`` pins vectors per content hash or text.
    """

    def __init__(
        self,
        store: AssetStore,
        dim: int = 64,
        seed: int = 0,
        overrides: Mapping[str, Sequence[float]] | None = None,
    ):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.store = store
        self.dim = dim
        self.seed = seed
        self.overrides = dict(overrides or {})
        self.name = f"mock-embed-{dim}"

    def _text_vec(self, text: str) -> np.ndarray:
        words = _WORD.findall(text.lower())
        if not words:
            return gaussian_unit(seed_int("text", text, self.seed), self.dim)
        acc = np.zeros(self.dim)
        for w in words:
            acc += gaussian_unit(seed_int("word", w, self.seed), self.dim)
        n = np.linalg.norm(acc)
        return acc / n if n > 0 else gaussian_unit(seed_int("text", text, self.seed), self.dim)

    def embed_text(self, text: str) -> list[float]:
        _require_text(text, "text to embed")
        if text in self.overrides:
            return _normalize(np.asarray(self.overrides[text], dtype=float))
        return _normalize(self._text_vec(text))

    def embed_image(self, asset: AssetRef) -> list[float]:
        if asset.kind != "image":
            raise PreconditionError("embed_image needs an image asset")
        if asset.content_hash in self.overrides:
            return _normalize(np.asarray(self.overrides[asset.content_hash], dtype=float))
        data = self.store.get(asset)
        mock = decode_mock(data)
        if mock is None or mock.get("kind") != "image":
            return _normalize(gaussian_unit(seed_int("image", asset.content_hash, self.seed), self.dim))
        a, t, n = mock["mix"]
        vec = a * gaussian_unit(seed_int("image", _anchor_key(mock["anchor_seed"]), self.seed), self.dim)
        if mock.get("text"):
            vec = vec + t * self._text_vec(mock["text"])
        vec = vec + n * gaussian_unit(seed_int("noise", mock["feature_seed"], self.seed), self.dim)
        return _normalize(vec)


def _anchor_key(anchor_seed: int) -> str:
    return f"anchor:{anchor_seed}"


class MockPoseEstimator:
    def __init__(self, store: AssetStore, keypoints: int = 17, unavailable: Sequence[str] = ()):
        self.store = store
        self.keypoints = keypoints
        self.unavailable = set(unavailable)
        self.name = f"mock-pose-{keypoints}"

    def estimate_pose(self, asset: AssetRef) -> list[tuple[float, float]]:
        if asset.kind != "image":
            raise PreconditionError("estimate_pose needs an image asset")
        self.store.verify(asset)
        if asset.content_hash in self.unavailable:
            return []
        rng = np.random.default_rng(seed_int("pose", asset.content_hash))
        pts = np.clip(rng.uniform(0.0, 1.0, size=(self.keypoints, 2)), 0.0, 1.0)
        return [(float(x), float(y)) for x, y in pts]


class MockVideoAnalyzer:
    """Reads in-band frame seeds of mock videos.

    Flow between two frames is zero when their seeds match, so a constant-frame
    video has no motion. With ``interpolation=True`` it also reports a
    frame-interpolation smoothness score, which takes precedence over the
    flow-based fallback.
    """

    def __init__(self, store: AssetStore, dim: int = 64, *, interpolation: bool = False):
        self.store = store
        self.dim = dim
        self.interpolation = interpolation
        self.name = "mock-video-analyzer"

    def _load(self, video: AssetRef) -> dict[str, Any]:
        if video.kind != "video":
            raise PreconditionError("expected a video asset")
        mock = decode_mock(self.store.get(video))
        if mock is None or mock.get("kind") != "video":
            raise MalformedOutput(f"video {video.content_hash[:12]} is not decodable by {self.name}")
        return mock

    def estimate_flow(self, video: AssetRef) -> list[float]:
        mock = self._load(video)
        seeds = mock["frame_seeds"]
        out = []
        for a, b in zip(seeds, seeds[1:]):
            out.append(0.0 if a == b else mock["motion"] * (0.25 + 0.75 * unit_uniform("flow", a, b)))
        return out

    def score_frames(self, video: AssetRef, criterion: str) -> list[float]:
        if criterion not in FRAME_CRITERIA:
            raise ValueError(f"unknown frame criterion {criterion!r}")
        mock = self._load(video)
        return [0.3 + 0.6 * unit_uniform(criterion, s, mock["base_seed"]) for s in mock["frame_seeds"]]

    def embed_frames(self, video: AssetRef, space: str) -> list[list[float]]:
        if space not in FRAME_SPACES:
            raise ValueError(f"unknown feature space {space!r}")
        mock = self._load(video)
        base = gaussian_unit(seed_int(space, "base", mock["base_seed"]), self.dim)
        cache: dict[int, list[float]] = {}
        out = []
        for s in mock["frame_seeds"]:
            if s not in cache:
                cache[s] = _normalize(base + mock["drift"] * gaussian_unit(seed_int(space, "frame", s), self.dim))
            out.append(cache[s])
        return out

    def interpolation_smoothness(self, video: AssetRef) -> float | None:
        if not self.interpolation:
            return None
        mock = self._load(video)
        return 0.9 + 0.1 * unit_uniform("interp", mock["base_seed"], tuple(mock["frame_seeds"]))


# -- chat ------------------------------------------------------------------

Reply = Union[str, Callable[[ChatRequest, int], str]]

_SUBJECTS = ["morning light", "a quiet street", "the old market", "a rooftop garden", "the harbor", "a small cafe",
             "the train platform", "a bookshop", "the riverbank", "a crowded square", "the hillside", "a workshop"]
_ACTIONS = ["walks slowly through", "pauses to look at", "laughs while exploring", "sketches", "photographs",
            "chats with a stranger at", "sits down at", "runs toward", "carefully examines", "waves goodbye to"]
_MOODS = ["warm", "nostalgic", "playful", "calm", "curious", "bittersweet", "hopeful"]
_CAMERA = ["slow dolly-in", "handheld tracking shot", "wide establishing pan", "low-angle tilt up", "gentle orbit"]
_INSTRUMENTS = ["acoustic guitar", "soft piano", "strings", "ukulele", "light percussion", "flute"]


def fenced(doc: Any) -> str:
    return "```json\n" + json.dumps(doc, indent=2, ensure_ascii=False) + "\n```"


class MockChatModel:
    """Scripted or synthetic chat replies.

    ``script`` maps a route (optionally suffixed ``[index]``) or a schema id
    to a reply, a list of replies consumed in order (the last one repeats),
    or a callable ``(request, call_number) -> str``. Unscripted requests go
    to the reply table: ``"autopilot"`` synthesizes a valid structured reply
    from a hash of the request, ``"pass"`` always answers ``PASS``.

    ``chaos`` is the chance that an autopilot generator reply is
    structurally off (wrong storyboard count, missing or shuffled entries),
    for exercising the engine's auto-fail paths.
    """

    TABLES = ("autopilot", "pass")

    def __init__(
        self,
        seed: int = 0,
        script: Mapping[str, Reply | Sequence[Reply]] | None = None,
        *,
        table: str = "autopilot",
        pass_rate: float = 0.75,
        chaos: float = 0.0,
        name: str = "mock-chat",
        fail: bool = False,
    ):
        if table not in self.TABLES:
            raise ValueError(f"unknown reply table {table!r}")
        self.seed = seed
        self.script = dict(script or {})
        self.table = table
        self.pass_rate = pass_rate
        self.chaos = chaos
        self.name = name
        self._switch = _FailureSwitch(fail)
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}
        self.log: list[ChatRequest] = []

    def calls(self, route: str | None = None) -> int:
        with self._lock:
            if route is None:
                return len(self.log)
            return sum(1 for r in self.log if r.route == route)

    def chat(self, request: ChatRequest) -> ChatResponse:
        check_chat_request(request)
        self._switch.check(self.name)
        key = self._script_key(request)
        with self._lock:
            self.log.append(request)
            if key is not None:
                n = self._counts.get(key, 0)
                self._counts[key] = n + 1
        if key is not None:
            entry = self.script[key]
            if isinstance(entry, (list, tuple)):
                reply = entry[min(n, len(entry) - 1)]
            else:
                reply = entry
            text = reply(request, n) if callable(reply) else reply
        elif self.table == "pass":
            text = "PASS"
        else:
            text = self._autopilot(request)
        return ChatResponse(text=text, model=self.name, prompt_tokens=len(request.text().split()),
                            completion_tokens=len(text.split()))

    def _script_key(self, request: ChatRequest) -> str | None:
        index = request.hints.get("index")
        candidates = []
        if index is not None:
            candidates.append(f"{request.route}[{index}]")
        candidates += [request.route, request.schema_id]
        for c in candidates:
            if c and c in self.script:
                return c
        return None

    # synthetic replies

    def _rng(self, request: ChatRequest) -> random.Random:
        images = tuple(a.content_hash for a in request.media())
        return random.Random(seed_int("chat", self.seed, request.route, request.system, request.text(), images))

    def _autopilot(self, request: ChatRequest) -> str:
        rng = self._rng(request)
        handler = getattr(self, "_auto_" + request.schema_id.rsplit("/", 1)[-1], None)
        if handler is None:
            return "PASS"
        return handler(request, rng)

    def _messy(self, rng: random.Random) -> bool:
        return self.chaos > 0 and rng.random() < self.chaos

    def _line(self, rng: random.Random, who: str = "The traveler") -> str:
        return f"{who} {rng.choice(_ACTIONS)} {rng.choice(_SUBJECTS)}, feeling {rng.choice(_MOODS)}."

    def _auto_story(self, request: ChatRequest, rng: random.Random) -> str:
        theme = request.hints.get("theme", "a day out")
        lines = " ".join(self._line(rng) for _ in range(rng.randint(4, 7)))
        return fenced({
            "character": f"A {rng.choice(_MOODS)} young traveler with a bright scarf and a worn canvas backpack.",
            "story": f"Theme: {theme}. {lines}",
        })

    def _auto_storyboards(self, request: ChatRequest, rng: random.Random) -> str:
        lo, hi = request.hints.get("k_bounds", (4, 8))
        k = rng.randint(lo, hi)
        if self._messy(rng):
            k = rng.choice([max(1, lo - 2), hi + 1])
        boards = [{"index": i, "text": self._line(rng)} for i in range(1, k + 1)]
        return fenced({"storyboards": boards})

    def _indexed(self, request: ChatRequest, rng: random.Random, key: str, make: Callable[[int], str]) -> str:
        indices = list(request.hints.get("indices", [1]))
        items = [{"index": i, "text": make(i)} for i in indices]
        if self._messy(rng):
            if rng.random() < 0.5 and len(items) > 1:
                items.pop(rng.randrange(len(items)))
            else:
                rng.shuffle(items)
        return fenced({key: items})

    def _auto_video_prompts(self, request: ChatRequest, rng: random.Random) -> str:
        return self._indexed(request, rng, "video_prompts", lambda i: (
            f"Scene {i}: {rng.choice(_CAMERA)}, {rng.choice(_MOODS)} atmosphere, {rng.choice(_SUBJECTS)} "
            f"with local details."
        ))

    def _auto_monologues(self, request: ChatRequest, rng: random.Random) -> str:
        return self._indexed(request, rng, "monologues", lambda i: (
            f"I never expected {rng.choice(_SUBJECTS)} to feel this {rng.choice(_MOODS)}."
        ))

    def _auto_music(self, request: ChatRequest, rng: random.Random) -> str:
        theme = request.hints.get("theme", "")
        return fenced({"music": f"A {rng.choice(_MOODS)} track with {rng.choice(_INSTRUMENTS)} and "
                                f"{rng.choice(_INSTRUMENTS)}, matching {theme}".strip()})

    def _auto_review(self, request: ChatRequest, rng: random.Random) -> str:
        if rng.random() < self.pass_rate:
            return fenced({"passed": True, "feedback": ""})
        return fenced({"passed": False, "feedback": f"Make the scene about {rng.choice(_SUBJECTS)} more vivid."})

    def _auto_image_quality(self, request: ChatRequest, rng: random.Random) -> str:
        if rng.random() < 0.5:
            return fenced({"qualified": True, "issues": [], "suggestion": ""})
        issues = sorted(rng.sample(IMAGE_ISSUES, rng.randint(1, 2)), key=IMAGE_ISSUES.index)
        return fenced({"qualified": False, "issues": issues,
                       "suggestion": f"Fix {issues[0].replace('_', ' ')} and keep the outfit consistent."})

    def _auto_edit_prompt(self, request: ChatRequest, rng: random.Random) -> str:
        suggestion = request.hints.get("suggestion", "refine the image")
        return fenced({"edit_prompt": f"Edit the image: {suggestion} Keep the character identity."})

    def _auto_video_quality(self, request: ChatRequest, rng: random.Random) -> str:
        if rng.random() < 0.5:
            return fenced({"qualified": True, "revised_prompt": "", "reason": ""})
        return fenced({
            "qualified": False,
            "revised_prompt": f"{request.hints.get('prompt', 'The scene')} Smooth, natural motion; stable face.",
            "reason": "Motion looks jittery and the face distorts mid-clip.",
        })

    def _auto_storyboard_judge(self, request: ChatRequest, rng: random.Random) -> str:
        dims = [{"name": name, "score": rng.randint(3, 5), "reason": f"{name.replace('_', ' ')} is solid."}
                for name in STORYBOARD_DIMENSIONS]
        return fenced({"dimensions": dims})


def mock_providers(
    store: AssetStore,
    seed: int = 0,
    *,
    image_config: ProviderConfig | None = None,
    chat: MockChatModel | None = None,
    dim: int = 64,
    keypoints: int = 17,
    frames: int = 16,
    clip_duration: float = 5.0,
    fail: Sequence[str] = (),
) -> ProviderSet:
    """Wire a complete mock ``ProviderSet``; ``fail`` names operations that always error."""
    fail = set(fail)
    return ProviderSet(
        chat=chat or MockChatModel(seed, fail="chat" in fail),
        image_editor=MockImageEditor(store, image_config, seed, fail="edit_image" in fail),
        video_generator=MockVideoGenerator(store, seed, frames=frames, duration=clip_duration,
                                           fail="image_to_video" in fail),
        music=MockMusicGenerator(store, seed, fail="text_to_music" in fail),
        speech=MockSpeechSynthesizer(store, seed, fail="text_to_speech" in fail),
        embedder=MockEmbedder(store, dim),
        pose=MockPoseEstimator(store, keypoints),
        video_analyzer=MockVideoAnalyzer(store, dim),
    )
