"""Five generator/reviewer agent pairs and the bounded generate-review loop.

Stage order is story -> seg -> {video, mono, music}; the last three only read
the storyboards and may run concurrently.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Generic, Mapping, Sequence, TypeVar

from .domain import (
    AssetRef,
    CharacterProfile,
    Monologue,
    MusicPrompt,
    PlanBundle,
    ReviewVerdict,
    StageTrace,
    Story,
    Storyboard,
    ThemeSpec,
    VideoPrompt,
    validate,
)
from .providers.base import ChatRequest, Part, ProviderSet
from .structured import ParseError, ask_structured
from .templates import PromptTemplate, TemplateLibrary

log = logging.getLogger(__name__)

T = TypeVar("T")

AGENT_IDS = ("story", "seg", "video", "mono", "music")
EXHAUSTION_POLICIES = ("proceed", "abort")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, checkpoint: MacfCheckpoint | None = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.checkpoint = checkpoint


class AutoFail(Exception):
    """A candidate parsed but breaks a structural rule; counts as a failed review."""


@dataclass(frozen=True)
class AgentSpec:
    id: str
    generator: PromptTemplate
    reviewer: PromptTemplate
    output_schema: str
    max_rounds: int = 3

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if "candidate" not in self.reviewer.placeholders:
            raise ValueError(f"{self.id}: reviewer template must take $candidate")


@dataclass(frozen=True)
class MacfConfig:
    max_rounds: int = 3
    k_min: int = 4
    k_max: int = 8
    exhaustion: str = "proceed"
    parallel: bool = True

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("k bounds must satisfy 1 <= k_min <= k_max")
        if self.exhaustion not in EXHAUSTION_POLICIES:
            raise ValueError(f"exhaustion policy must be one of {EXHAUSTION_POLICIES}")


@dataclass
class ReviewOutcome(Generic[T]):
    artifact: T
    trace: StageTrace

    @property
    def exhausted(self) -> bool:
        return self.trace.exhausted


@dataclass(frozen=True)
class MacfCheckpoint:
    """Completed stages of a partial run, enough to resume without re-asking."""

    character: CharacterProfile | None = None
    story: Story | None = None
    storyboards: tuple[Storyboard, ...] | None = None
    traces: tuple[StageTrace, ...] = ()


def _feedback_block(verdicts: Sequence[ReviewVerdict]) -> str:
    lines = ["Reviewer feedback on your earlier drafts (address all of it):"]
    for v in verdicts:
        if not v.passed:
            lines.append(f"Round {v.round}: {v.feedback}")
    return "\n".join(lines)


def _parse_verdict(doc: Mapping[str, Any]) -> tuple[bool, str]:
    passed = bool(doc["passed"])
    feedback = doc.get("feedback", "").strip()
    if not passed and not feedback:
        raise ParseError("a failing verdict needs feedback")
    return passed, "" if passed else feedback


def format_boards(boards: Sequence[Storyboard]) -> str:
    return "\n".join(f"Storyboard {b.index}: {b.text}" for b in boards)


def format_indexed(items: Sequence[Any]) -> str:
    return "\n".join(f"[{it.index}] {it.text}" for it in items)


def _indexed_items(doc_items: Sequence[Mapping[str, Any]], cls: type, what: str) -> list[Any]:
    indices = [int(it["index"]) for it in doc_items]
    if len(set(indices)) != len(indices):
        raise ParseError(f"duplicate {what} indices")
    items = [cls(index=int(it["index"]), text=it["text"].strip()) for it in doc_items]
    for it in items:
        if not it.text:
            raise ParseError(f"{what} {it.index} is blank")
    return sorted(items, key=lambda it: it.index)


class Macf:
    def __init__(
        self,
        providers: ProviderSet | None,
        config: MacfConfig | None = None,
        templates: TemplateLibrary | None = None,
    ):
        # providers may be None when only rendering prompts
        self.providers = providers
        self.config = config or MacfConfig()
        self.templates = templates or TemplateLibrary.load()
        self.agents = {
            aid: AgentSpec(
                id=aid,
                generator=self.templates[f"{aid}/generator"],
                reviewer=self.templates[f"{aid}/reviewer"],
                output_schema={"seg": "storyboards", "video": "video_prompts", "mono": "monologues"}.get(aid, aid),
                max_rounds=self.config.max_rounds,
            )
            for aid in AGENT_IDS
        }

    # -- the generate-review operator -------------------------------------

    def generate_review(
        self,
        agent: AgentSpec,
        variables: Mapping[str, Any],
        convert: Callable[[Any], T],
        show: Callable[[T], str],
        *,
        generator_images: Sequence[AssetRef] = (),
        reviewer_images: Sequence[AssetRef] = (),
        hints: Mapping[str, Any] | None = None,
        notes: Sequence[str] = (),
    ) -> ReviewOutcome[T]:
        """Run rounds of generate -> review until the reviewer passes or rounds run out.

        ``convert`` turns the parsed reply into the artifact and may raise
        ``ParseError`` (repair re-ask) or ``AutoFail`` (the round fails with
        that message as feedback, without calling the reviewer).
        """
        hints = dict(hints or {})
        gen_model = self.providers.chat_for(f"{agent.id}.generator")
        rev_model = self.providers.chat_for(f"{agent.id}.reviewer")
        verdicts: list[ReviewVerdict] = []
        generator_calls = repairs = 0
        artifact: T | None = None
        structural_failure: str | None = None

        for rnd in range(1, agent.max_rounds + 1):
            prompt = agent.generator.render(variables)
            if verdicts:
                prompt = prompt.rstrip("\n") + "\n\n" + _feedback_block(verdicts)
            request = ChatRequest(
                system=agent.generator.system,
                parts=(Part(text=prompt),) + tuple(Part(image=img) for img in generator_images),
                schema_id=agent.output_schema,
                route=f"{agent.id}.generator",
                hints={**hints, "round": rnd},
            )
            failure: str | None = None

            def checked(doc: Any) -> Any:
                nonlocal failure
                try:
                    return convert(doc)
                except AutoFail as exc:
                    failure = str(exc)
                    return None

            generator_calls += 1
            try:
                result = ask_structured(gen_model, request, checked)
            except ParseError as exc:
                raise StageError(agent.id, f"unparseable generator output: {exc}") from None
            repairs += result.repairs
            if failure is not None:
                structural_failure = failure
                verdicts.append(ReviewVerdict(agent.id, rnd, False, failure))
                continue
            structural_failure = None
            artifact = result.value
            review_vars = {**variables, "candidate": show(artifact)}
            review_request = ChatRequest(
                system=agent.reviewer.system,
                parts=(Part(text=agent.reviewer.render(review_vars)),)
                + tuple(Part(image=img) for img in reviewer_images),
                schema_id="review",
                route=f"{agent.id}.reviewer",
                hints={**hints, "round": rnd},
            )
            try:
                review = ask_structured(rev_model, review_request, _parse_verdict)
            except ParseError as exc:
                raise StageError(agent.id, f"unparseable reviewer verdict: {exc}") from None
            repairs += review.repairs
            passed, feedback = review.value
            verdicts.append(ReviewVerdict(agent.id, rnd, passed, feedback))
            if passed:
                break

        exhausted = not verdicts[-1].passed
        trace_notes = list(notes)
        if exhausted:
            if structural_failure is not None or artifact is None:
                raise StageError(agent.id, f"review exhausted on a structurally invalid candidate: "
                                           f"{structural_failure}")
            if self.config.exhaustion == "abort":
                raise StageError(agent.id, f"reviewer did not pass any of {agent.max_rounds} rounds")
            log.warning("%s: review exhausted after %d rounds; proceeding with the last candidate",
                        agent.id, agent.max_rounds)
            trace_notes.append("review_exhausted: proceeding with the last candidate")
        trace = StageTrace(
            stage=agent.id,
            verdicts=tuple(verdicts),
            exhausted=exhausted,
            generator_calls=generator_calls,
            repair_calls=repairs,
            notes=tuple(trace_notes),
        )
        return ReviewOutcome(artifact, trace)

    # -- the five agents ---------------------------------------------------

    def story_variables(self, theme: str) -> dict[str, Any]:
        return {"theme": theme}

    def run_story_agent(self, theme: str, stylized_ref: AssetRef) -> tuple[CharacterProfile, Story, StageTrace]:
        if stylized_ref.kind != "image":
            raise ValueError("the story agent needs the stylized reference image")

        def convert(doc: Mapping[str, Any]) -> tuple[CharacterProfile, Story]:
            character, story = doc["character"].strip(), doc["story"].strip()
            if not character or not story:
                raise ParseError("character and story must be nonblank")
            return CharacterProfile(character), Story(story)

        def show(pair: tuple[CharacterProfile, Story]) -> str:
            return f"Character: {pair[0].description}\n\nStory: {pair[1].text}"

        out = self.generate_review(
            self.agents["story"],
            self.story_variables(theme),
            convert,
            show,
            generator_images=(stylized_ref,),
            reviewer_images=(stylized_ref,),
            hints={"theme": theme},
            notes=("reviewer saw the stylized reference",),
        )
        character, story = out.artifact
        return character, story, out.trace

    def run_seg_agent(self, story: Story) -> tuple[tuple[Storyboard, ...], StageTrace]:
        if not story.text.strip():
            raise ValueError("story must be nonempty")
        lo, hi = self.config.k_min, self.config.k_max

        def convert(doc: Mapping[str, Any]) -> tuple[Storyboard, ...]:
            boards = _indexed_items(doc["storyboards"], Storyboard, "storyboard")
            if [b.index for b in boards] != list(range(1, len(boards) + 1)):
                raise ParseError("storyboard indices must run 1..k without gaps")
            if not lo <= len(boards) <= hi:
                raise AutoFail(f"storyboard count out of range: got {len(boards)}, need {lo} to {hi}")
            return tuple(boards)

        out = self.generate_review(
            self.agents["seg"],
            {"story": story.text, "k_min": lo, "k_max": hi},
            convert,
            format_boards,
            hints={"k_bounds": (lo, hi)},
            notes=("reviewer did not see the stylized reference",),
        )
        return out.artifact, out.trace

    def _run_per_board(self, aid: str, key: str, cls: type, boards: Sequence[Storyboard], what: str):
        if not boards:
            raise ValueError("storyboards must be nonempty")
        expected = [b.index for b in boards]

        def convert(doc: Mapping[str, Any]):
            items = _indexed_items(doc[key], cls, what)
            if [it.index for it in items] != expected:
                raise AutoFail(
                    f"expected exactly one {what} per storyboard index {expected[0]}..{expected[-1]}, "
                    f"got indices {[it.index for it in items]}"
                )
            return tuple(items)

        out = self.generate_review(
            self.agents[aid],
            {"storyboards": format_boards(boards)},
            convert,
            format_indexed,
            hints={"indices": expected},
            notes=("reviewer did not see the stylized reference",),
        )
        return out.artifact, out.trace

    def run_video_agent(self, boards: Sequence[Storyboard]) -> tuple[tuple[VideoPrompt, ...], StageTrace]:
        return self._run_per_board("video", "video_prompts", VideoPrompt, boards, "video description")

    def run_mono_agent(self, boards: Sequence[Storyboard]) -> tuple[tuple[Monologue, ...], StageTrace]:
        return self._run_per_board("mono", "monologues", Monologue, boards, "monologue")

    def run_music_agent(self, boards: Sequence[Storyboard], theme: str) -> tuple[MusicPrompt, StageTrace]:
        if not boards:
            raise ValueError("storyboards must be nonempty")

        def convert(doc: Mapping[str, Any]) -> MusicPrompt:
            text = doc["music"].strip()
            if not text:
                raise ParseError("music description is blank")
            return MusicPrompt(text)

        out = self.generate_review(
            self.agents["music"],
            {"theme": theme, "storyboards": format_boards(boards)},
            convert,
            lambda m: m.text,
            hints={"theme": theme},
            notes=("reviewer did not see the stylized reference",),
        )
        return out.artifact, out.trace

    # -- whole framework ---------------------------------------------------

    def run_macf(
        self,
        theme_spec: ThemeSpec,
        stylized_ref: AssetRef,
        checkpoint: MacfCheckpoint | None = None,
    ) -> PlanBundle:
        cp = checkpoint or MacfCheckpoint()
        theme = theme_spec.theme_text
        traces = list(cp.traces)
        try:
            if cp.story is None:
                character, story, trace = self.run_story_agent(theme, stylized_ref)
                traces.append(trace)
                cp = MacfCheckpoint(character, story, None, tuple(traces))
            if cp.storyboards is None:
                boards, trace = self.run_seg_agent(cp.story)
                traces.append(trace)
                cp = MacfCheckpoint(cp.character, cp.story, boards, tuple(traces))
        except StageError as exc:
            exc.checkpoint = cp
            raise
        boards = cp.storyboards

        jobs = {
            "video": lambda: self.run_video_agent(boards),
            "mono": lambda: self.run_mono_agent(boards),
            "music": lambda: self.run_music_agent(boards, theme),
        }
        results: dict[str, Any] = {}
        errors: list[StageError] = []
        if self.config.parallel:
            with ThreadPoolExecutor(max_workers=3, thread_name_prefix="macf") as pool:
                futures = {name: pool.submit(fn) for name, fn in jobs.items()}
                for name, fut in futures.items():
                    try:
                        results[name] = fut.result()
                    except StageError as exc:
                        errors.append(exc)
        else:
            for name, fn in jobs.items():
                try:
                    results[name] = fn()
                except StageError as exc:
                    errors.append(exc)
                    break
        if errors:
            # the fan-out stages commit together, so a partial plan holds story + storyboards only
            errors[0].checkpoint = cp
            raise errors[0]

        video_prompts, vt = results["video"]
        monologues, mt = results["mono"]
        music, mut = results["music"]
        plan = PlanBundle(
            character=cp.character,
            story=cp.story,
            storyboards=boards,
            video_prompts=video_prompts,
            monologues=monologues,
            music=music,
            review_trace=tuple(traces) + (vt, mt, mut),
        )
        problems = validate(plan, k_bounds=(self.config.k_min, self.config.k_max), max_rounds=self.config.max_rounds)
        if problems:
            raise StageError("plan", "; ".join(problems), cp)
        return plan

    def render_stage_one(self, theme: str) -> dict[str, str]:
        """Stage-one prompts exactly as they would be sent, for dry runs."""
        agent = self.agents["story"]
        variables = self.story_variables(theme)
        return {
            "story/generator": agent.generator.render(variables),
            "story/reviewer": agent.reviewer.render({**variables, "candidate": "<candidate from the generator>"}),
        }
