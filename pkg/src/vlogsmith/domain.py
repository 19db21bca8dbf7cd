"""Shared value types and the persisted document format.

Every type here is a frozen dataclass. Documents are stored as JSON with a
``schema_version`` and ``type`` header; decoding is strict and rejects
unknown fields, since much of what gets decoded came from a model provider.
"""

from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass
from typing import Any, Optional, Union

SCHEMA_VERSION = 1

ASSET_KINDS = ("image", "video", "audio")
IMAGE_ISSUES = (
    "limb_count",
    "abnormal_pose_or_expression",
    "abnormal_background_or_foreground",
    "unreasonable_clothing",
    "low_resolution",
    "description_misalignment",
)
ATTEMPT_OUTCOMES = ("accepted", "rolled_back", "qualified_first_pass", "superseded")
VIDEO_METRICS = (
    "subject_consistency",
    "background_consistency",
    "motion_smoothness",
    "dynamic_degree",
    "aesthetic_quality",
    "imaging_quality",
)
STORYBOARD_DIMENSIONS = (
    "story_interest",
    "temporal_continuity",
    "behavioral_diversity",
    "thematic_consistency",
)


class SchemaError(ValueError):
    """A document does not match the shape of its declared type."""


@dataclass(frozen=True)
class AssetRef:
    content_hash: str
    kind: str
    uri: str
    width: Optional[int] = None
    height: Optional[int] = None
    duration: Optional[float] = None


@dataclass(frozen=True)
class ThemeSpec:
    theme_text: str
    style_text: str
    reference_image: AssetRef
    voice_reference: Optional[AssetRef] = None
    seed: int = 0


@dataclass(frozen=True)
class CharacterProfile:
    description: str


@dataclass(frozen=True)
class Story:
    text: str


@dataclass(frozen=True)
class Storyboard:
    index: int
    text: str


@dataclass(frozen=True)
class VideoPrompt:
    index: int
    text: str


@dataclass(frozen=True)
class Monologue:
    index: int
    text: str


@dataclass(frozen=True)
class MusicPrompt:
    text: str


@dataclass(frozen=True)
class ReviewVerdict:
    stage: str
    round: int
    passed: bool
    feedback: str = ""


@dataclass(frozen=True)
class StageTrace:
    """Verdicts of one generate-review loop plus loop-level flags."""

    stage: str
    verdicts: tuple[ReviewVerdict, ...]
    exhausted: bool = False
    generator_calls: int = 0
    repair_calls: int = 0
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class PlanBundle:
    character: CharacterProfile
    story: Story
    storyboards: tuple[Storyboard, ...]
    video_prompts: tuple[VideoPrompt, ...]
    monologues: tuple[Monologue, ...]
    music: MusicPrompt
    review_trace: tuple[StageTrace, ...] = ()

    @property
    def k(self) -> int:
        return len(self.storyboards)


@dataclass(frozen=True)
class ImageScorePair:
    i2i: float
    i2t: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.i2i, self.i2t)


@dataclass(frozen=True)
class VideoScoreVector:
    subject_consistency: float
    background_consistency: float
    motion_smoothness: float
    dynamic_degree: float
    aesthetic_quality: float
    imaging_quality: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in VIDEO_METRICS)

    @classmethod
    def from_values(cls, values) -> VideoScoreVector:
        values = tuple(float(v) for v in values)
        if len(values) != len(VIDEO_METRICS):
            raise ValueError(f"expected {len(VIDEO_METRICS)} values, got {len(values)}")
        return cls(*values)


@dataclass(frozen=True)
class ImageIssueReport:
    issues: tuple[str, ...]
    suggestion: str


@dataclass(frozen=True)
class VideoIssueReport:
    revised_prompt: str
    reason: str


@dataclass(frozen=True)
class ImageAttempt:
    asset: AssetRef
    scores: ImageScorePair
    prompt: str
    outcome: str
    issue_report: Optional[ImageIssueReport] = None


@dataclass(frozen=True)
class VideoAttempt:
    asset: AssetRef
    scores: VideoScoreVector
    prompt: str
    outcome: str
    issue_report: Optional[VideoIssueReport] = None


@dataclass(frozen=True)
class KeyframeRecord:
    index: int
    accepted: AssetRef
    scores: ImageScorePair
    attempts: tuple[ImageAttempt, ...]
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class VideoRecord:
    index: int
    accepted: AssetRef
    scores: VideoScoreVector
    attempts: tuple[VideoAttempt, ...]
    prompt: str = ""
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ManifestClip:
    index: int
    video: AssetRef
    speech: AssetRef
    speech_offset: float
    clip_duration: float
    speech_duration: float
    speech_trimmed: bool


@dataclass(frozen=True)
class ProviderIdentity:
    role: str
    name: str


@dataclass(frozen=True)
class Provenance:
    seed: int
    providers: tuple[ProviderIdentity, ...]
    config_digest: str
    voice: str
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class VlogManifest:
    stylized_reference: AssetRef
    clips: tuple[ManifestClip, ...]
    bgm: AssetRef
    bgm_gain: float
    bgm_fit: str
    total_duration: float
    mux_command: tuple[str, ...]
    provenance: Provenance


@dataclass(frozen=True)
class DimensionScore:
    name: str
    score: int
    reason: str


@dataclass(frozen=True)
class StoryboardScore:
    dimensions: tuple[DimensionScore, ...]

    def score_of(self, name: str) -> int:
        for dim in self.dimensions:
            if dim.name == name:
                return dim.score
        raise KeyError(name)


@dataclass(frozen=True)
class ItemReport:
    item_id: str
    storyboard: Optional[StoryboardScore]
    text_image_alignment: float
    character_consistency: float
    character_consistency_incomplete: bool
    video: VideoScoreVector
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class AggregateScores:
    story_interest: Optional[float]
    temporal_continuity: Optional[float]
    behavioral_diversity: Optional[float]
    thematic_consistency: Optional[float]
    text_image_alignment: float
    character_consistency: float
    video: VideoScoreVector


@dataclass(frozen=True)
class EvalReport:
    per_item: tuple[ItemReport, ...]
    aggregate: AggregateScores
    items_total: int
    items_storyboard_scored: int
    judge: str
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class AudioTracks:
    bgm: AssetRef
    speeches: tuple[AssetRef, ...]
    voice: str


RUN_STAGES = ("stylize", "plan", "keyframes", "videos", "audio", "assemble", "done")


@dataclass(frozen=True)
class ArtifactDigest:
    path: str
    sha256: str


@dataclass(frozen=True)
class StageRecord:
    stage: str
    artifacts: tuple[ArtifactDigest, ...]
    completed_at: str


@dataclass(frozen=True)
class RunState:
    """Persisted progress of one run; ``stage`` is the next stage to execute."""

    run_id: str
    stage: str
    completed: tuple[StageRecord, ...]
    config_digest: str
    seed: int
    created_at: str
    updated_at: str
    last_error: Optional[str] = None


DOCUMENT_TYPES: dict[str, type] = {
    cls.__name__: cls
    for cls in (
        AssetRef,
        ThemeSpec,
        CharacterProfile,
        Story,
        Storyboard,
        VideoPrompt,
        Monologue,
        MusicPrompt,
        ReviewVerdict,
        StageTrace,
        PlanBundle,
        ImageScorePair,
        VideoScoreVector,
        ImageIssueReport,
        VideoIssueReport,
        ImageAttempt,
        VideoAttempt,
        KeyframeRecord,
        VideoRecord,
        ManifestClip,
        ProviderIdentity,
        Provenance,
        VlogManifest,
        DimensionScore,
        StoryboardScore,
        ItemReport,
        AggregateScores,
        EvalReport,
        AudioTracks,
        ArtifactDigest,
        StageRecord,
        RunState,
    )
}


# -- serialization ---------------------------------------------------------


def to_data(obj: Any) -> Any:
    """Convert a domain value into plain JSON-compatible data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_data(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_data(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        raise SchemaError(f"non-finite float {obj!r} cannot be serialized")
    return obj


def _hints(cls: type) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise SchemaError(f"{path}: expected a list")
        (elem, _ellipsis) = typing.get_args(tp)
        return tuple(_coerce(elem, v, f"{path}[{i}]") for i, v in enumerate(value))
    if dataclasses.is_dataclass(tp):
        return from_data(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"{path}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise SchemaError(f"{path}: expected a string")
        return value
    raise SchemaError(f"{path}: unsupported field type {tp!r}")


def from_data(cls: type, data: Any, path: str = "$") -> Any:
    """Strictly decode plain data into ``cls``; unknown fields are an error."""
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object for {cls.__name__}")
    hints = _hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise SchemaError(f"{path}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise SchemaError(f"{path}: missing field {f.name}")
            continue
        kwargs[f.name] = _coerce(hints[f.name], data[f.name], f"{path}.{f.name}")
    return cls(**kwargs)


def dumps(obj: Any) -> str:
    """Serialize a top-level document with its version header."""
    body = {"schema_version": SCHEMA_VERSION, "type": type(obj).__name__}
    body.update(to_data(obj))
    return json.dumps(body, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def loads(text: str, expected: type | None = None) -> Any:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not a JSON document: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("document root must be an object")
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}")
    type_name = data.pop("type", None)
    cls = DOCUMENT_TYPES.get(type_name)
    if cls is None:
        raise SchemaError(f"unknown document type {type_name!r}")
    if expected is not None and cls is not expected:
        raise SchemaError(f"expected a {expected.__name__} document, got {type_name}")
    return from_data(cls, data)


def schema_document() -> dict[str, Any]:
    """Describe every document type's fields; published as the schema file."""

    def describe(tp: Any) -> str:
        origin = typing.get_origin(tp)
        if origin in (Union, types.UnionType):
            args = [a for a in typing.get_args(tp) if a is not type(None)]
            return f"optional {describe(args[0])}"
        if origin is tuple:
            return f"list of {describe(typing.get_args(tp)[0])}"
        return getattr(tp, "__name__", str(tp))

    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "types": {}}
    for name, cls in DOCUMENT_TYPES.items():
        hints = _hints(cls)
        out["types"][name] = {f.name: describe(hints[f.name]) for f in dataclasses.fields(cls)}
    return out


# -- invariant checks ------------------------------------------------------


def _finite(x: Any) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def _check_asset(ref: AssetRef, where: str, out: list[str], kind: str | None = None) -> None:
    if ref.kind not in ASSET_KINDS:
        out.append(f"{where}: unknown asset kind {ref.kind!r}")
    if kind is not None and ref.kind != kind:
        out.append(f"{where}: expected a {kind} asset, got {ref.kind}")
    if len(ref.content_hash) != 64 or any(c not in "0123456789abcdef" for c in ref.content_hash):
        out.append(f"{where}: content_hash is not a sha256 hex digest")
    has_dims = ref.width is not None and ref.height is not None
    if ref.kind in ("image", "video") and not has_dims:
        out.append(f"{where}: {ref.kind} asset needs width and height")
    if ref.kind == "audio" and (ref.width is not None or ref.height is not None):
        out.append(f"{where}: audio asset must not carry width/height")
    if ref.kind in ("video", "audio") and (ref.duration is None or ref.duration <= 0):
        out.append(f"{where}: {ref.kind} asset needs a positive duration")
    if ref.kind == "image" and ref.duration is not None:
        out.append(f"{where}: image asset must not carry a duration")


def _check_indexed(items, name: str, out: list[str]) -> None:
    indices = [it.index for it in items]
    if len(set(indices)) != len(indices):
        out.append(f"{name}: duplicate indices")
    if sorted(indices) != list(range(1, len(indices) + 1)):
        out.append(f"{name}: indices are not contiguous 1..{len(indices)}")
    for it in items:
        if not it.text.strip():
            out.append(f"{name}[{it.index}]: empty text")


def _check_video_scores(v: VideoScoreVector, where: str, out: list[str]) -> None:
    for name in VIDEO_METRICS:
        x = getattr(v, name)
        if not _finite(x):
            out.append(f"{where}.{name}: not finite")
        elif not 0.0 <= x <= 1.0:
            out.append(f"{where}.{name}: out of [0,1]")


def _check_image_scores(s: ImageScorePair, where: str, out: list[str]) -> None:
    for name in ("i2i", "i2t"):
        x = getattr(s, name)
        if not _finite(x):
            out.append(f"{where}.{name}: not finite")
        elif not -1.0 <= x <= 1.0:
            out.append(f"{where}.{name}: out of [-1,1]")


def _check_record(rec, out: list[str], score_check) -> None:
    if rec.index < 1:
        out.append("index: must be >= 1")
    if not rec.attempts:
        out.append("attempts: empty")
        return
    for i, att in enumerate(rec.attempts):
        score_check(att.scores, f"attempts[{i}].scores", out)
        if att.outcome not in ATTEMPT_OUTCOMES:
            out.append(f"attempts[{i}].outcome: unknown outcome {att.outcome!r}")
    chosen = [a for a in rec.attempts if a.asset == rec.accepted]
    if len(chosen) != 1:
        out.append("accepted: must equal the asset of exactly one attempt")
        return
    if chosen[0].scores != rec.scores:
        out.append("scores: differ from the accepted attempt's scores")
    first = rec.attempts[0].scores.as_tuple()
    best = chosen[0].scores.as_tuple()
    if chosen[0] is not rec.attempts[0] and not all(b > f for b, f in zip(best, first)):
        out.append("scores: accepted attempt does not dominate the first attempt")


def validate(doc: Any, *, k_bounds: tuple[int, int] | None = None, max_rounds: int | None = None) -> list[str]:
    """Return the invariant violations of ``doc``; an empty list means ok."""
    out: list[str] = []
    if isinstance(doc, AssetRef):
        _check_asset(doc, "asset", out)
    elif isinstance(doc, ThemeSpec):
        if not doc.theme_text.strip():
            out.append("theme_text: empty")
        if not doc.style_text.strip():
            out.append("style_text: empty")
        _check_asset(doc.reference_image, "reference_image", out, kind="image")
        if doc.voice_reference is not None:
            _check_asset(doc.voice_reference, "voice_reference", out, kind="audio")
        if doc.seed < 0:
            out.append("seed: must be unsigned")
    elif isinstance(doc, (CharacterProfile,)):
        if not doc.description.strip():
            out.append("description: empty")
    elif isinstance(doc, (Story, MusicPrompt)):
        if not doc.text.strip():
            out.append("text: empty")
    elif isinstance(doc, ReviewVerdict):
        _check_verdict(doc, "verdict", out, max_rounds)
    elif isinstance(doc, PlanBundle):
        if not doc.character.description.strip():
            out.append("character: empty description")
        if not doc.story.text.strip():
            out.append("story: empty text")
        _check_indexed(doc.storyboards, "storyboards", out)
        _check_indexed(doc.video_prompts, "video_prompts", out)
        _check_indexed(doc.monologues, "monologues", out)
        k = len(doc.storyboards)
        if len(doc.video_prompts) != k:
            out.append("|storyboards| ≠ |video_prompts|")
        if len(doc.monologues) != k:
            out.append("|storyboards| ≠ |monologues|")
        if k_bounds is not None and not k_bounds[0] <= k <= k_bounds[1]:
            out.append(f"k={k} outside [{k_bounds[0]}, {k_bounds[1]}]")
        if not doc.music.text.strip():
            out.append("music: empty text")
        for trace in doc.review_trace:
            for v in trace.verdicts:
                _check_verdict(v, f"review_trace[{trace.stage}]", out, max_rounds)
    elif isinstance(doc, ImageScorePair):
        _check_image_scores(doc, "scores", out)
    elif isinstance(doc, VideoScoreVector):
        _check_video_scores(doc, "scores", out)
    elif isinstance(doc, ImageIssueReport):
        bad = [i for i in doc.issues if i not in IMAGE_ISSUES]
        if bad:
            out.append(f"issues: unknown categories {bad}")
        if bool(doc.issues) != bool(doc.suggestion.strip()):
            out.append("suggestion: must be nonempty exactly when issues are present")
    elif isinstance(doc, VideoIssueReport):
        if not doc.revised_prompt.strip():
            out.append("revised_prompt: empty")
        if not doc.reason.strip():
            out.append("reason: empty")
    elif isinstance(doc, KeyframeRecord):
        _check_record(doc, out, _check_image_scores)
        _check_asset(doc.accepted, "accepted", out, kind="image")
    elif isinstance(doc, VideoRecord):
        _check_record(doc, out, _check_video_scores)
        _check_asset(doc.accepted, "accepted", out, kind="video")
    elif isinstance(doc, VlogManifest):
        _check_manifest(doc, out)
    elif isinstance(doc, StoryboardScore):
        _check_storyboard_score(doc, out)
    elif isinstance(doc, EvalReport):
        _check_report(doc, out)
    elif isinstance(doc, AudioTracks):
        _check_asset(doc.bgm, "bgm", out, kind="audio")
        for i, sp in enumerate(doc.speeches, start=1):
            _check_asset(sp, f"speeches[{i}]", out, kind="audio")
    elif isinstance(doc, RunState):
        _check_run_state(doc, out)
    return out


def _check_run_state(r: RunState, out: list[str]) -> None:
    if r.stage not in RUN_STAGES:
        out.append(f"stage: unknown stage {r.stage!r}")
        return
    done = [c.stage for c in r.completed]
    expected = list(RUN_STAGES[: RUN_STAGES.index(r.stage)])
    if done != expected:
        out.append(f"completed: stages {done} do not match the declared order up to {r.stage}")


def _check_verdict(v: ReviewVerdict, where: str, out: list[str], max_rounds: int | None) -> None:
    if v.round < 1:
        out.append(f"{where}: round must be >= 1")
    if max_rounds is not None and v.round > max_rounds:
        out.append(f"{where}: round {v.round} exceeds max_rounds {max_rounds}")
    if v.passed and v.feedback:
        out.append(f"{where}: feedback must be empty on a passing verdict")
    if not v.passed and not v.feedback.strip():
        out.append(f"{where}: feedback required on a failing verdict")


def _check_manifest(m: VlogManifest, out: list[str]) -> None:
    _check_asset(m.stylized_reference, "stylized_reference", out, kind="image")
    _check_asset(m.bgm, "bgm", out, kind="audio")
    if [c.index for c in m.clips] != list(range(1, len(m.clips) + 1)):
        out.append("clips: not ordered by index 1..k")
    for c in m.clips:
        _check_asset(c.video, f"clips[{c.index}].video", out, kind="video")
        _check_asset(c.speech, f"clips[{c.index}].speech", out, kind="audio")
        if c.clip_duration <= 0:
            out.append(f"clips[{c.index}]: clip_duration must be positive")
        if c.speech_trimmed != (c.speech_duration > c.clip_duration):
            out.append(f"clips[{c.index}]: speech_trimmed disagrees with durations")
    total = sum(c.clip_duration for c in m.clips)
    if abs(total - m.total_duration) > 1e-9:
        out.append("total_duration: differs from the sum of clip durations")


def _check_storyboard_score(s: StoryboardScore, out: list[str]) -> None:
    names = [d.name for d in s.dimensions]
    for want in STORYBOARD_DIMENSIONS:
        if names.count(want) != 1:
            out.append(f"dimension {want}: must appear exactly once")
    for d in s.dimensions:
        if d.name not in STORYBOARD_DIMENSIONS:
            out.append(f"dimension {d.name!r}: unknown")
        if not 1 <= d.score <= 5:
            out.append(f"dimension {d.name}: score out of [1,5]")
        if not d.reason.strip():
            out.append(f"dimension {d.name}: empty reason")


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs)


def _check_report(r: EvalReport, out: list[str]) -> None:
    items = r.per_item
    if not items:
        out.append("per_item: empty")
        return
    a = r.aggregate
    pairs = [
        ("text_image_alignment", _mean([i.text_image_alignment for i in items]), a.text_image_alignment),
        ("character_consistency", _mean([i.character_consistency for i in items]), a.character_consistency),
    ]
    for name in VIDEO_METRICS:
        pairs.append((name, _mean([getattr(i.video, name) for i in items]), getattr(a.video, name)))
    scored = [i.storyboard for i in items if i.storyboard is not None]
    for dim in STORYBOARD_DIMENSIONS:
        got = getattr(a, dim)
        if not scored:
            if got is not None:
                out.append(f"aggregate.{dim}: must be absent with no scored items")
            continue
        pairs.append((dim, _mean([float(s.score_of(dim)) for s in scored]), got))
    # reports are written with 6-decimal values, so allow their rounding error
    for name, want, got in pairs:
        if got is None or abs(want - got) > 1e-6:
            out.append(f"aggregate.{name}: not the mean of per-item values")
    if r.items_total != len(items):
        out.append("items_total: disagrees with per_item")
    if r.items_storyboard_scored != len(scored):
        out.append("items_storyboard_scored: disagrees with per_item")


def replace(obj: Any, **changes: Any) -> Any:
    return dataclasses.replace(obj, **changes)


__all__ = [name for name in DOCUMENT_TYPES] + [
    "SCHEMA_VERSION",
    "SchemaError",
    "dumps",
    "loads",
    "to_data",
    "from_data",
    "validate",
    "schema_document",
    "replace",
]
