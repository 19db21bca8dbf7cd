"""Keyframe and video generation with feedback and rollback, plus audio.

A quality agent inspects each generated asset. When it reports problems the
asset is regenerated from a revised prompt, and the new attempt replaces the
current one only if it scores strictly higher on every tracked component.
Otherwise the current attempt is kept. Audio has no feedback loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

from .domain import (
    AssetRef,
    CharacterProfile,
    ImageAttempt,
    ImageIssueReport,
    ImageScorePair,
    KeyframeRecord,
    PlanBundle,
    Storyboard,
    VideoAttempt,
    VideoIssueReport,
    VideoPrompt,
    VideoRecord,
    VideoScoreVector,
    VIDEO_METRICS,
)
from .macf import StageError
from .metrics import MetricConfig, cosine, video_scores
from .providers.base import ChatRequest, Part, ProviderSet
from .structured import ParseError, ask_structured
from .templates import TemplateLibrary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrmConfig:
    image_feedback_iterations: int = 1
    video_feedback_iterations: int = 1
    strict_dominance: bool = True

    def __post_init__(self) -> None:
        if self.image_feedback_iterations < 0 or self.video_feedback_iterations < 0:
            raise ValueError("feedback iterations must be >= 0")


def dominates(candidate: Sequence[float], original: Sequence[float], strict: bool = True) -> bool:
    """True iff every candidate component beats the original (``>=`` when not strict)."""
    if len(candidate) != len(original):
        raise ValueError("score tuples differ in length")
    if strict:
        return all(c > o for c, o in zip(candidate, original))
    return all(c >= o for c, o in zip(candidate, original)) and tuple(candidate) != tuple(original)


def image_accept_or_rollback(original: ImageAttempt, candidate: ImageAttempt, strict: bool = True) -> ImageAttempt:
    return candidate if dominates(candidate.scores.as_tuple(), original.scores.as_tuple(), strict) else original


def video_accept_or_rollback(original: VideoAttempt, candidate: VideoAttempt, strict: bool = True) -> VideoAttempt:
    return candidate if dominates(candidate.scores.as_tuple(), original.scores.as_tuple(), strict) else original


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _image_verdict(doc: Mapping[str, Any]) -> Optional[ImageIssueReport]:
    issues = tuple(doc["issues"])
    suggestion = doc["suggestion"].strip()
    if doc["qualified"]:
        if issues:
            raise ParseError("a qualified verdict must not list issues")
        return None
    if not issues:
        raise ParseError("an unqualified verdict must list at least one issue")
    if not suggestion:
        raise ParseError("an unqualified verdict needs a modification suggestion")
    return ImageIssueReport(issues=issues, suggestion=suggestion)


def _video_verdict(doc: Mapping[str, Any]) -> Optional[VideoIssueReport]:
    revised, reason = doc["revised_prompt"].strip(), doc["reason"].strip()
    if doc["qualified"]:
        return None
    if not revised or not reason:
        raise ParseError("an unqualified verdict needs both a revised prompt and a reason")
    return VideoIssueReport(revised_prompt=revised, reason=reason)


class Frm:
    def __init__(
        self,
        providers: ProviderSet,
        config: FrmConfig | None = None,
        metric_config: MetricConfig | None = None,
        templates: TemplateLibrary | None = None,
    ):
        self.providers = providers
        self.config = config or FrmConfig()
        self.metric_config = metric_config or MetricConfig()
        self.templates = templates or TemplateLibrary.load()

    # -- keyframes ---------------------------------------------------------

    def keyframe_prompt(self, board: Storyboard) -> str:
        return self.templates["pipeline/keyframe"].render({"storyboard": board.text})

    def generate_keyframe(self, board: Storyboard, stylized_ref: AssetRef) -> AssetRef:
        if stylized_ref.kind != "image":
            raise ValueError("keyframes are edited from the stylized reference image")
        return self.providers.image_editor.edit_image(self.keyframe_prompt(board), stylized_ref)

    def score_keyframe(self, keyframe: AssetRef, stylized_ref: AssetRef, board: Storyboard) -> ImageScorePair:
        emb = self.providers.embedder
        key_vec = emb.embed_image(keyframe)
        return ImageScorePair(
            i2i=cosine(key_vec, emb.embed_image(stylized_ref)),
            i2t=cosine(key_vec, emb.embed_text(board.text)),
        )

    def assess_image(
        self,
        keyframe: AssetRef,
        board: Storyboard,
        character: CharacterProfile,
        stylized_ref: AssetRef,
        scores: ImageScorePair,
    ) -> Optional[ImageIssueReport]:
        tpl = self.templates["frm/image_quality"]
        text = tpl.render({
            "storyboard": board.text,
            "character": character.description,
            "i2i": _fmt(scores.i2i),
            "i2t": _fmt(scores.i2t),
        })
        request = ChatRequest(
            system=tpl.system,
            parts=(Part(text=text), Part(image=stylized_ref), Part(image=keyframe)),
            schema_id="frm/image_quality",
            route="image_quality",
            hints={"index": board.index},
        )
        try:
            return ask_structured(self.providers.chat_for("image_quality"), request, _image_verdict).value
        except ParseError as exc:
            raise StageError("image_quality", f"storyboard {board.index}: {exc}") from None

    def edit_prompt(self, report: ImageIssueReport, board: Storyboard) -> str:
        tpl = self.templates["frm/edit"]
        request = ChatRequest(
            system=tpl.system,
            parts=(Part(text=tpl.render({"storyboard": board.text, "suggestion": report.suggestion})),),
            schema_id="frm/edit_prompt",
            route="edit",
            hints={"index": board.index, "suggestion": report.suggestion},
        )
        doc = ask_structured(self.providers.chat_for("edit"), request).value
        return doc["edit_prompt"].strip()

    def regenerate_keyframe(
        self, report: ImageIssueReport, board: Storyboard, stylized_ref: AssetRef
    ) -> tuple[AssetRef, str]:
        prompt = self.edit_prompt(report, board)
        asset = self.providers.image_editor.edit_image(prompt, stylized_ref, context=(board.text,))
        return asset, prompt

    def run_image_frm(self, board: Storyboard, character: CharacterProfile, stylized_ref: AssetRef) -> KeyframeRecord:
        prompt = self.keyframe_prompt(board)
        first = self.generate_keyframe(board, stylized_ref)
        attempts: list[dict[str, Any]] = [{
            "asset": first,
            "scores": self.score_keyframe(first, stylized_ref, board),
            "prompt": prompt,
            "outcome": None,
            "issue_report": None,
        }]
        current = 0
        notes: list[str] = ["quality agent decides without score thresholds"]
        for iteration in range(self.config.image_feedback_iterations):
            cur = attempts[current]
            report = self.assess_image(cur["asset"], board, character, stylized_ref, cur["scores"])
            cur["issue_report"] = report
            if report is None:
                if iteration == 0:
                    cur["outcome"] = "qualified_first_pass"
                break
            try:
                asset, edit_prompt = self.regenerate_keyframe(report, board, stylized_ref)
            except ParseError as exc:
                notes.append(f"edit agent reply unusable, kept current image: {exc}")
                break
            cand = {
                "asset": asset,
                "scores": self.score_keyframe(asset, stylized_ref, board),
                "prompt": edit_prompt,
                "outcome": None,
                "issue_report": None,
            }
            attempts.append(cand)
            if dominates(cand["scores"].as_tuple(), cur["scores"].as_tuple(), self.config.strict_dominance):
                cur["outcome"] = "superseded"
                current = len(attempts) - 1
            else:
                cand["outcome"] = "rolled_back"
        if attempts[current]["outcome"] is None:
            attempts[current]["outcome"] = "accepted"
        frozen = tuple(ImageAttempt(**a) for a in attempts)
        chosen = frozen[current]
        return KeyframeRecord(board.index, chosen.asset, chosen.scores, frozen, tuple(notes))

    # -- videos --------------------------------------------------------------

    def generate_video(self, video_prompt: VideoPrompt | str, keyframe: AssetRef) -> AssetRef:
        text = video_prompt.text if isinstance(video_prompt, VideoPrompt) else video_prompt
        return self.providers.video_generator.image_to_video(text, keyframe)

    def score_video(self, video: AssetRef) -> VideoScoreVector:
        return video_scores(self.providers.video_analyzer, video, self.metric_config)

    def assess_video(
        self, video: AssetRef, prompt: str, scores: VideoScoreVector, keyframe: AssetRef, index: int
    ) -> Optional[VideoIssueReport]:
        tpl = self.templates["frm/video_quality"]
        score_text = ", ".join(f"{name} {_fmt(v)}" for name, v in zip(VIDEO_METRICS, scores.as_tuple()))
        request = ChatRequest(
            system=tpl.system,
            parts=(Part(text=tpl.render({"prompt": prompt, "scores": score_text})),
                   Part(image=keyframe), Part(video=video)),
            schema_id="frm/video_quality",
            route="video_quality",
            hints={"index": index, "prompt": prompt},
        )
        try:
            return ask_structured(self.providers.chat_for("video_quality"), request, _video_verdict).value
        except ParseError as exc:
            raise StageError("video_quality", f"clip {index}: {exc}") from None

    def regenerate_video(self, report: VideoIssueReport, keyframe: AssetRef) -> AssetRef:
        return self.providers.video_generator.image_to_video(report.revised_prompt, keyframe)

    def run_video_frm(self, video_prompt: VideoPrompt, keyframe: AssetRef) -> VideoRecord:
        """``keyframe`` is the accepted keyframe for this index, whether or not it was regenerated."""
        first = self.generate_video(video_prompt, keyframe)
        attempts: list[dict[str, Any]] = [{
            "asset": first,
            "scores": self.score_video(first),
            "prompt": video_prompt.text,
            "outcome": None,
            "issue_report": None,
        }]
        current = 0
        for iteration in range(self.config.video_feedback_iterations):
            cur = attempts[current]
            report = self.assess_video(cur["asset"], cur["prompt"], cur["scores"], keyframe, video_prompt.index)
            cur["issue_report"] = report
            if report is None:
                if iteration == 0:
                    cur["outcome"] = "qualified_first_pass"
                break
            asset = self.regenerate_video(report, keyframe)
            cand = {
                "asset": asset,
                "scores": self.score_video(asset),
                "prompt": report.revised_prompt,
                "outcome": None,
                "issue_report": None,
            }
            attempts.append(cand)
            if dominates(cand["scores"].as_tuple(), cur["scores"].as_tuple(), self.config.strict_dominance):
                cur["outcome"] = "superseded"
                current = len(attempts) - 1
            else:
                cand["outcome"] = "rolled_back"
        if attempts[current]["outcome"] is None:
            attempts[current]["outcome"] = "accepted"
        frozen = tuple(VideoAttempt(**a) for a in attempts)
        chosen = frozen[current]
        return VideoRecord(
            video_prompt.index, chosen.asset, chosen.scores, frozen, chosen.prompt,
            ("quality agent decides without score thresholds",),
        )

    # -- audio ---------------------------------------------------------------

    def generate_audio(
        self, plan: PlanBundle, voice_reference: AssetRef | None
    ) -> tuple[AssetRef, tuple[AssetRef, ...], str]:
        """Background music from the music prompt and one speech track per monologue.

        Returns ``(bgm, speeches, voice)`` where ``voice`` records which voice was used.
        """
        bgm = self.providers.music.text_to_music(plan.music.text)
        speeches = tuple(self.providers.speech.text_to_speech(m.text, voice_reference) for m in plan.monologues)
        voice = voice_reference.content_hash if voice_reference is not None else "provider-default"
        return bgm, speeches, voice
