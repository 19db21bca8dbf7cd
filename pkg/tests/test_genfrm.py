from __future__ import annotations

import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles.metric_oracles import o_dominates
from vlogsmith.domain import (
    CharacterProfile,
    ImageAttempt,
    ImageScorePair,
    Monologue,
    MusicPrompt,
    PlanBundle,
    Story,
    Storyboard,
    VideoAttempt,
    VideoPrompt,
    VideoScoreVector,
)
from vlogsmith.genfrm import (
    Frm,
    FrmConfig,
    dominates,
    image_accept_or_rollback,
    video_accept_or_rollback,
)
from vlogsmith.macf import StageError
from vlogsmith.metrics import video_scores
from vlogsmith.providers.mock import MockChatModel, MockEmbedder, fenced, make_mock_video, mock_providers

BOARD = Storyboard(1, "She sips coffee by the window as rain falls.")
CHAR = CharacterProfile("A young woman with short black hair and a yellow raincoat.")
QUALIFIED = fenced({"qualified": True, "issues": [], "suggestion": ""})
ISSUE = fenced({"qualified": False, "issues": ["limb_count"], "suggestion": "Show exactly two hands on the cup."})
EDIT = fenced({"edit_prompt": "Redraw her holding the cup with two hands."})
V_OK = fenced({"qualified": True, "revised_prompt": "", "reason": ""})
V_ISSUE = fenced({"qualified": False, "revised_prompt": "Slow pan across the table.", "reason": "jitter"})


def frm_with(store, script, seed=3, **cfg):
    chat = MockChatModel(seed, script)
    p = mock_providers(store, seed, chat=chat)
    return Frm(p, FrmConfig(**cfg)), p, chat


def e(i, dim=64):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


# -- acceptance rule ----------------------------------------------------------------

REL = {"<": -1.0, "=": 0.0, ">": 1.0}


def test_two_component_truth_table():
    for rels in itertools.product(REL, repeat=2):
        orig = (0.5, 0.5)
        cand = tuple(0.5 + 0.1 * REL[r] for r in rels)
        assert dominates(cand, orig) == all(r == ">" for r in rels), rels


def test_six_component_sampled_truth_table():
    rng = random.Random(0)
    cases = [("=",) * 6, (">",) * 6] + [tuple(rng.choice("<=>") for _ in range(6)) for _ in range(200)]
    for rels in cases:
        cand = tuple(0.5 + 0.1 * REL[r] for r in rels)
        assert dominates(cand, (0.5,) * 6) == all(r == ">" for r in rels)


def test_non_strict_variant():
    assert dominates((0.6, 0.5), (0.5, 0.5), strict=False)
    assert not dominates((0.5, 0.5), (0.5, 0.5), strict=False)
    with pytest.raises(ValueError):
        dominates((1.0,), (0.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=2), st.lists(st.floats(0, 1), min_size=2, max_size=2),
       st.text(max_size=5), st.text(max_size=5))
def test_decision_depends_only_on_scores(cand_scores, orig_scores, p1, p2):
    from vlogsmith.domain import AssetRef

    a = AssetRef("0" * 64, "image", "asset://0", 1, 1)
    b = AssetRef("1" * 64, "image", "asset://1", 1, 1)
    orig = ImageAttempt(a, ImageScorePair(*orig_scores), p1, "accepted")
    cand = ImageAttempt(b, ImageScorePair(*cand_scores), p2, "rolled_back")
    got = image_accept_or_rollback(orig, cand)
    assert (got is cand) == o_dominates(cand_scores, orig_scores)
    swapped = ImageAttempt(a, cand.scores, p1, "accepted")
    assert (image_accept_or_rollback(orig, swapped) is swapped) == (got is cand)


def test_video_accept_or_rollback(store):
    from vlogsmith.domain import AssetRef

    a = AssetRef("0" * 64, "video", "asset://0", 1, 1, 1.0)
    lo = VideoScoreVector(*[0.4] * 6)
    hi = VideoScoreVector(*[0.5] * 6)
    assert video_accept_or_rollback(VideoAttempt(a, lo, "p", "x"), VideoAttempt(a, hi, "q", "y")).prompt == "q"
    assert video_accept_or_rollback(VideoAttempt(a, lo, "p", "x"), VideoAttempt(a, lo, "q", "y")).prompt == "p"


# -- keyframes -----------------------------------------------------------------------

def test_keyframe_determinism_and_resolution(store, reference):
    f1, _, _ = frm_with(store, {})
    f2, _, _ = frm_with(store, {})
    a = f1.generate_keyframe(BOARD, reference)
    assert a == f2.generate_keyframe(BOARD, reference)
    assert (a.width, a.height) == (768, 1360)
    assert a != f1.generate_keyframe(Storyboard(2, "He rides a bike along the canal."), reference)


def test_qualified_first_pass(store, reference):
    frm, _, chat = frm_with(store, {"image_quality": QUALIFIED})
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    assert len(rec.attempts) == 1 and rec.attempts[0].outcome == "qualified_first_pass"
    assert chat.calls("edit") == 0


def test_zero_iterations_skip_quality_agent(store, reference):
    frm, _, chat = frm_with(store, {}, image_feedback_iterations=0)
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    assert len(rec.attempts) == 1 and rec.attempts[0].outcome == "accepted"
    assert chat.calls() == 0


def _two_attempt_assets(store, reference):
    frm, _, _ = frm_with(store, {"image_quality": ISSUE, "edit": EDIT})
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    return rec.attempts[0].asset, rec.attempts[1].asset


@pytest.mark.parametrize("better", [True, False])
def test_dominance_with_pinned_embeddings(store, reference, better):
    first, second = _two_attempt_assets(store, reference)
    good = (e(0) + e(1)) / np.sqrt(2)          # cosine 0.707 with both targets
    poor = (e(0) + e(1) + np.sqrt(2) * e(2)) / 2  # cosine 0.5 with both targets
    frm, p, _ = frm_with(store, {"image_quality": ISSUE, "edit": EDIT})
    p.embedder = MockEmbedder(store, 64, overrides={
        reference.content_hash: e(0), BOARD.text: e(1),
        first.content_hash: poor if better else good,
        second.content_hash: good if better else poor,
    })
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    assert len(rec.attempts) == 2
    if better:
        assert rec.accepted == second
        assert [a.outcome for a in rec.attempts] == ["superseded", "accepted"]
        assert rec.scores.i2i == pytest.approx(2 ** -0.5)
    else:
        assert rec.accepted == first
        assert [a.outcome for a in rec.attempts] == ["accepted", "rolled_back"]


def test_tie_rolls_back(store, reference):
    first, second = _two_attempt_assets(store, reference)
    frm, p, _ = frm_with(store, {"image_quality": ISSUE, "edit": EDIT})
    p.embedder = MockEmbedder(store, 64, overrides={
        reference.content_hash: e(0), BOARD.text: e(1), first.content_hash: e(0) + e(1), second.content_hash: e(0) + e(1)})
    assert frm.run_image_frm(BOARD, CHAR, reference).accepted == first


def test_edit_prompt_carries_suggestion(store, reference):
    frm, _, chat = frm_with(store, {"image_quality": ISSUE, "edit": EDIT})
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    edit_req = [r for r in chat.log if r.route == "edit"][0]
    assert "Show exactly two hands on the cup." in edit_req.text()
    assert rec.attempts[1].prompt == "Redraw her holding the cup with two hands."
    assert rec.attempts[0].issue_report.issues == ("limb_count",)


def test_edit_parse_failure_keeps_original(store, reference):
    frm, _, _ = frm_with(store, {"image_quality": ISSUE, "edit": "no json"})
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    assert len(rec.attempts) == 1 and rec.attempts[0].outcome == "accepted"
    assert any("edit agent reply unusable" in n for n in rec.notes)


def test_issue_without_suggestion_is_schema_violation(store, reference):
    bad = fenced({"qualified": False, "issues": ["low_resolution"], "suggestion": ""})
    frm, _, _ = frm_with(store, {"image_quality": bad})
    with pytest.raises(StageError):
        frm.run_image_frm(BOARD, CHAR, reference)


def test_quality_prompt_shows_scores_and_images(store, reference):
    frm, _, chat = frm_with(store, {"image_quality": QUALIFIED})
    rec = frm.run_image_frm(BOARD, CHAR, reference)
    req = chat.log[0]
    assert f"{rec.scores.i2i:.4f}" in req.text() and f"{rec.scores.i2t:.4f}" in req.text()
    assert [p.image for p in req.parts if p.image] == [reference, rec.accepted]


# -- videos -------------------------------------------------------------------------

VP = VideoPrompt(1, "She lifts the cup and smiles.")


def test_video_scores_match_metrics(store, reference):
    frm, p, _ = frm_with(store, {"video_quality": V_OK})
    rec = frm.run_video_frm(VP, reference)
    assert rec.scores == video_scores(p.video_analyzer, rec.accepted)
    assert rec.attempts[0].outcome == "qualified_first_pass"


def test_constant_frame_video_scores(store):
    frm, _, _ = frm_with(store, {})
    s = frm.score_video(make_mock_video(store, [4] * 6))
    assert s.subject_consistency == pytest.approx(1.0) and s.dynamic_degree == 0.0


class PinnedFrm(Frm):
    def __init__(self, *a, pinned, **kw):
        super().__init__(*a, **kw)
        self.pinned = pinned
        self.seen = []

    def score_video(self, video):
        self.seen.append(video)
        return self.pinned[len(self.seen) - 1]


@pytest.mark.parametrize("better", [True, False])
def test_video_dominance(store, reference, better):
    chat = MockChatModel(3, {"video_quality": V_ISSUE})
    p = mock_providers(store, 3, chat=chat)
    lo, hi = VideoScoreVector(*[0.4] * 6), VideoScoreVector(*[0.6] * 6)
    frm = PinnedFrm(p, FrmConfig(), pinned=[lo, hi] if better else [hi, lo])
    rec = frm.run_video_frm(VP, reference)
    assert len(rec.attempts) == 2
    assert rec.attempts[1].prompt == "Slow pan across the table."
    if better:
        assert rec.accepted == rec.attempts[1].asset and rec.prompt == "Slow pan across the table."
    else:
        assert rec.accepted == rec.attempts[0].asset and rec.attempts[1].outcome == "rolled_back"


def test_empty_revised_prompt_is_violation(store, reference):
    bad = fenced({"qualified": False, "revised_prompt": "", "reason": "jitter"})
    frm, _, _ = frm_with(store, {"video_quality": bad})
    with pytest.raises(StageError):
        frm.run_video_frm(VP, reference)


# -- audio ---------------------------------------------------------------------------

def plan(k=3):
    boards = tuple(Storyboard(i, f"board {i}") for i in range(1, k + 1))
    return PlanBundle(CHAR, Story("s"), boards, tuple(VideoPrompt(i, f"v {i}") for i in range(1, k + 1)),
                      tuple(Monologue(i, f"Line number {i} of the day.") for i in range(1, k + 1)),
                      MusicPrompt("soft jazz"), ())


def test_audio_counts_and_default_voice(store):
    frm, _, _ = frm_with(store, {})
    bgm, speeches, voice = frm.generate_audio(plan(4), None)
    assert len(speeches) == 4 and bgm.kind == "audio" and voice == "provider-default"
    again = frm_with(store, {})[0].generate_audio(plan(4), None)
    assert again == (bgm, speeches, voice)


def test_audio_with_voice_reference(store):
    frm, _, _ = frm_with(store, {})
    voice = store.put(b"voice sample", "audio", duration=3.0)
    _, speeches, used = frm.generate_audio(plan(2), voice)
    assert used == voice.content_hash
    assert speeches != frm.generate_audio(plan(2), None)[1]
