from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlogsmith import domain
from vlogsmith.domain import (
    AggregateScores,
    ArtifactDigest,
    AssetRef,
    CharacterProfile,
    DimensionScore,
    EvalReport,
    ImageAttempt,
    ImageIssueReport,
    ImageScorePair,
    ItemReport,
    KeyframeRecord,
    Monologue,
    MusicPrompt,
    PlanBundle,
    ReviewVerdict,
    RunState,
    StageRecord,
    StageTrace,
    Story,
    Storyboard,
    StoryboardScore,
    ThemeSpec,
    VideoPrompt,
    VideoScoreVector,
)

H = "ab" * 32


def img(h=H):
    return AssetRef(h, "image", f"assets/{h[:2]}/{h}", 768, 1360)


def plan(k=5, prompts=None, monos=None):
    prompts = k if prompts is None else prompts
    monos = k if monos is None else monos
    return PlanBundle(
        CharacterProfile("a traveler"),
        Story("a story"),
        tuple(Storyboard(i, f"board {i}") for i in range(1, k + 1)),
        tuple(VideoPrompt(i, f"video {i}") for i in range(1, prompts + 1)),
        tuple(Monologue(i, f"mono {i}") for i in range(1, monos + 1)),
        MusicPrompt("soft piano"),
        (StageTrace("story", (ReviewVerdict("story", 1, True, ""),), False, 1, 0),),
    )


def score(values=(4, 5, 5, 5)):
    return StoryboardScore(tuple(DimensionScore(n, s, "because") for n, s in zip(domain.STORYBOARD_DIMENSIONS, values)))


def test_plan_with_equal_arity_is_ok():
    assert domain.validate(plan(5)) == []


def test_plan_arity_mismatch_names_the_lists():
    assert "|storyboards| ≠ |video_prompts|" in domain.validate(plan(5, prompts=4))


def test_plan_k_bounds():
    assert domain.validate(plan(5), k_bounds=(4, 8)) == []
    assert any("outside" in v for v in domain.validate(plan(3), k_bounds=(4, 8)))


def test_storyboard_score_out_of_range():
    problems = domain.validate(score((4, 6, 5, 5)))
    assert any("score out of [1,5]" in p for p in problems)


def test_storyboard_score_missing_dimension():
    s = StoryboardScore(score().dimensions[:3])
    assert any("thematic_consistency" in p for p in domain.validate(s))


def test_verdict_rules():
    assert domain.validate(ReviewVerdict("seg", 1, False, "")) != []
    assert domain.validate(ReviewVerdict("seg", 1, True, "extra")) != []
    assert domain.validate(ReviewVerdict("seg", 4, True, ""), max_rounds=3) != []
    assert domain.validate(ReviewVerdict("seg", 2, False, "fix it"), max_rounds=3) == []


def test_theme_spec_invariants():
    assert domain.validate(ThemeSpec("theme", "style", img())) == []
    bad = domain.validate(ThemeSpec(" ", "", AssetRef(H, "audio", "x", duration=2.0)))
    assert len(bad) == 3


def test_asset_kind_specific_fields():
    assert domain.validate(AssetRef(H, "video", "u", 768, 1360)) != []  # no duration
    assert domain.validate(AssetRef(H, "audio", "u", duration=1.0)) == []
    assert domain.validate(AssetRef("xyz", "image", "u", 1, 1)) != []


def test_issue_report_suggestion_iff_issues():
    assert domain.validate(ImageIssueReport(("limb_count",), "")) != []
    assert domain.validate(ImageIssueReport((), "do something")) != []
    assert domain.validate(ImageIssueReport(("limb_count",), "fix the hands")) == []
    assert domain.validate(ImageIssueReport(("bogus",), "x")) != []


def _record(first, second, accept_second):
    a = ImageAttempt(img("01" * 32), ImageScorePair(*first), "p", "superseded" if accept_second else "accepted")
    b = ImageAttempt(img("02" * 32), ImageScorePair(*second), "q", "accepted" if accept_second else "rolled_back")
    chosen = b if accept_second else a
    return KeyframeRecord(1, chosen.asset, chosen.scores, (a, b))


def test_record_dominance_invariant():
    assert domain.validate(_record((0.5, 0.6), (0.55, 0.65), True)) == []
    assert domain.validate(_record((0.5, 0.6), (0.55, 0.6), False)) == []
    problems = domain.validate(_record((0.5, 0.6), (0.55, 0.6), True))
    assert any("dominate" in p for p in problems)


def test_run_state_order():
    rec = lambda s: StageRecord(s, (ArtifactDigest("x", "0" * 64),), "t")
    ok = RunState("r", "keyframes", (rec("stylize"), rec("plan")), "d", 0, "t", "t")
    assert domain.validate(ok) == []
    bad = RunState("r", "keyframes", (rec("plan"), rec("stylize")), "d", 0, "t", "t")
    assert domain.validate(bad) != []


def _vec(x):
    return VideoScoreVector.from_values([x] * 6)


def test_report_means_checked():
    items = (
        ItemReport("a", score(), 0.7, 0.5, False, _vec(0.4)),
        ItemReport("b", None, 0.9, 0.7, False, _vec(0.6)),
    )
    agg = AggregateScores(4.0, 5.0, 5.0, 5.0, 0.8, 0.6, _vec(0.5))
    rep = EvalReport(items, agg, 2, 1, "judge")
    assert domain.validate(rep) == []
    wrong = domain.replace(rep, aggregate=domain.replace(agg, text_image_alignment=0.81))
    assert domain.validate(wrong) == ["aggregate.text_image_alignment: not the mean of per-item values"]


def test_unknown_fields_rejected():
    text = domain.dumps(Story("x"))
    data = json.loads(text)
    data["surprise"] = 1
    with pytest.raises(domain.SchemaError, match="unknown field"):
        domain.loads(json.dumps(data))


def test_version_and_type_checked():
    with pytest.raises(domain.SchemaError):
        domain.loads('{"schema_version": 99, "type": "Story", "text": "x"}')
    with pytest.raises(domain.SchemaError):
        domain.loads(domain.dumps(Story("x")), expected=MusicPrompt)
    with pytest.raises(domain.SchemaError, match="expected an integer"):
        domain.loads('{"schema_version": 1, "type": "Storyboard", "index": "1", "text": "x"}')


def test_schema_document_lists_every_type():
    doc = domain.schema_document()
    assert set(doc["types"]) == set(domain.DOCUMENT_TYPES)
    assert doc["schema_version"] == domain.SCHEMA_VERSION


# -- round trips ------------------------------------------------------------

texts = st.text(min_size=1, max_size=30)
unit = st.floats(min_value=-1, max_value=1, allow_nan=False)
zero_one = st.floats(min_value=0, max_value=1, allow_nan=False)
hashes = st.text(alphabet="0123456789abcdef", min_size=64, max_size=64)
images = st.builds(lambda h, w, ht: AssetRef(h, "image", f"assets/{h[:2]}/{h}", w, ht),
                   hashes, st.integers(1, 4096), st.integers(1, 4096))
videos = st.builds(lambda h, d: AssetRef(h, "video", f"assets/{h[:2]}/{h}", 768, 1360, d),
                   hashes, st.floats(0.1, 60, allow_nan=False))
vectors = st.builds(lambda xs: VideoScoreVector.from_values(xs), st.lists(zero_one, min_size=6, max_size=6))
attempts = st.builds(ImageAttempt, images, st.builds(ImageScorePair, unit, unit), texts,
                     st.sampled_from(domain.ATTEMPT_OUTCOMES),
                     st.one_of(st.none(), st.builds(ImageIssueReport, st.tuples(st.sampled_from(domain.IMAGE_ISSUES)),
                                                    texts)))
documents = st.one_of(
    images,
    videos,
    vectors,
    st.builds(ThemeSpec, texts, texts, images, st.none(), st.integers(0, 2**32)),
    st.builds(lambda ats: KeyframeRecord(1, ats[0].asset, ats[0].scores, tuple(ats)),
              st.lists(attempts, min_size=1, max_size=3)),
    st.builds(ReviewVerdict, st.sampled_from(["story", "seg"]), st.integers(1, 5), st.booleans(), texts),
    st.builds(lambda k: plan(k), st.integers(1, 9)),
)


@settings(max_examples=150, deadline=None)
@given(documents)
def test_serialization_round_trip(doc):
    text = domain.dumps(doc)
    back = domain.loads(text)
    assert back == doc
    assert domain.dumps(back) == text


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9))
def test_arity_violation_detected_iff_lengths_differ(k, p, m):
    problems = domain.validate(plan(k, p, m))
    assert ("|storyboards| ≠ |video_prompts|" in problems) == (k != p)
    assert ("|storyboards| ≠ |monologues|" in problems) == (k != m)
