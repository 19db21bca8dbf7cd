from __future__ import annotations

import json
import shutil

import pytest

from conftest import FIXTURE, GOLDEN
from vlogsmith.cli import load_judge_script
from vlogsmith.domain import (
    DimensionScore,
    ItemReport,
    StoryboardScore,
    Storyboard,
    STORYBOARD_DIMENSIONS,
    VideoScoreVector,
)
from vlogsmith.evaluation import (
    BenchmarkError,
    OutputError,
    aggregate,
    evaluate_videos,
    load_benchmark,
    load_output,
    report_document,
    report_table,
    run_eval,
    score_storyboards,
)
from vlogsmith.providers.mock import MockChatModel, fenced, make_mock_video, mock_providers
from vlogsmith.store import AssetStore

TOL = 1e-9


@pytest.fixture(scope="module")
def fixture_result(tmp_path_factory):
    store = AssetStore(tmp_path_factory.mktemp("eval"))
    providers = mock_providers(store, 0)
    providers.chat_models["judge"] = load_judge_script(FIXTURE / "judge_script.json")
    bench = load_benchmark(FIXTURE / "benchmark")
    return run_eval(bench, FIXTURE / "outputs", providers, store, max_parallel=3)


# -- benchmark loading ----------------------------------------------------------

def test_fixture_loads():
    b = load_benchmark(FIXTURE / "benchmark")
    assert len(b.items) == 6 and len(b.references) == 2 and len(b.styles) == 1
    assert [i.item_id for i in b.items] == ["001", "002", "003", "004", "005", "006"]


def copy_bench(tmp_path):
    dst = tmp_path / "bench"
    shutil.copytree(FIXTURE / "benchmark", dst)
    return dst, json.loads((dst / "manifest.json").read_text())


def test_missing_image_names_the_reference(tmp_path):
    dst, doc = copy_bench(tmp_path)
    (dst / doc["references"][0]["image"]).unlink()
    with pytest.raises(BenchmarkError, match=doc["references"][0]["id"]):
        load_benchmark(dst)


def test_duplicate_item_id(tmp_path):
    dst, doc = copy_bench(tmp_path)
    doc["items"].append(dict(doc["items"][0]))
    (dst / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(BenchmarkError, match="duplicate"):
        load_benchmark(dst)


def test_unknown_style_and_version(tmp_path):
    dst, doc = copy_bench(tmp_path)
    doc["items"][0]["style"] = "oil"
    (dst / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(BenchmarkError, match="unknown style"):
        load_benchmark(dst)
    doc["schema_version"] = 2
    (dst / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(BenchmarkError):
        load_benchmark(dst)


def test_output_index_alignment(tmp_path, store):
    item = tmp_path / "item_x"
    shutil.copytree(FIXTURE / "outputs" / "item_001", item)
    out = load_output(item, store)
    assert out.item_id == "x" and len(out.storyboards) == len(out.keyframes) == len(out.videos)
    next(item.glob("clip_2.*")).unlink()
    with pytest.raises(OutputError, match="clip"):
        load_output(item, store)


# -- judge --------------------------------------------------------------------------

def judge_reply(scores=(4, 5, 5, 5), drop=None):
    dims = [{"name": n, "score": s, "reason": f"{n} reason"} for n, s in zip(STORYBOARD_DIMENSIONS, scores)]
    return fenced({"dimensions": [d for d in dims if d["name"] != drop]})


BOARDS = (Storyboard(1, "a"), Storyboard(2, "b"))


def judge(store, replies):
    p = mock_providers(store, 0)
    p.chat_models["judge"] = MockChatModel(script={"judge": replies})
    return score_storyboards(BOARDS, "theme", p)


def test_judge_accepts_valid(store):
    out = judge(store, judge_reply())
    assert out.status == "accepted"
    assert [d.score for d in out.score.dimensions] == [4, 5, 5, 5]
    assert all(d.reason for d in out.score.dimensions)


def test_judge_out_of_range_is_violation(store):
    out = judge(store, [judge_reply((0, 5, 5, 5)), judge_reply()])
    assert out.status == "schema_violation" and out.violations


def test_judge_missing_dimension_unscored(store):
    out = judge(store, judge_reply(drop="story_interest"))
    assert out.status == "unscored" and out.score is None


def test_fixture_judge_outcomes(fixture_result):
    status = {k: v.status for k, v in fixture_result.judge_outcomes.items()}
    assert status == {"001": "accepted", "002": "accepted", "003": "accepted", "004": "accepted",
                      "005": "schema_violation", "006": "unscored"}


# -- aggregation ------------------------------------------------------------------

def item(i, tia, scores=None):
    sb = None if scores is None else StoryboardScore(
        tuple(DimensionScore(n, s, "r") for n, s in zip(STORYBOARD_DIMENSIONS, scores)))
    return ItemReport(str(i), sb, tia, 0.5, False, VideoScoreVector(*[0.5] * 6))


def test_aggregate_single_item_is_that_item():
    agg = aggregate([item(1, 0.7, (1, 2, 3, 4))], judge="j").aggregate
    assert agg.text_image_alignment == 0.7 and agg.story_interest == 1.0 and agg.thematic_consistency == 4.0


def test_aggregate_two_items():
    assert aggregate([item(1, 0.7), item(2, 0.9)], judge="j").aggregate.text_image_alignment == pytest.approx(0.8)


def test_unscored_items_excluded_only_from_storyboard_means():
    with_unscored = aggregate([item(1, 0.2, (2, 2, 2, 2)), item(2, 0.4, (4, 4, 4, 4)), item(3, 0.9)], judge="j")
    without = aggregate([item(1, 0.2, (2, 2, 2, 2)), item(2, 0.4, (4, 4, 4, 4))], judge="j")
    assert with_unscored.aggregate.story_interest == without.aggregate.story_interest == 3.0
    assert with_unscored.items_storyboard_scored == 2 and with_unscored.items_total == 3
    assert with_unscored.aggregate.text_image_alignment == pytest.approx(0.5)
    assert aggregate([item(1, 0.5)], judge="j").aggregate.story_interest is None


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([], judge="j")


def test_video_mean_of_two_clips(store, tmp_path):
    from vlogsmith.evaluation import SystemOutput

    p = mock_providers(store, 0)
    still = make_mock_video(store, [1] * 6)
    moving = make_mock_video(store, [1, 2, 3, 4, 5, 6])
    mean, clips = evaluate_videos(SystemOutput("x", BOARDS, (), (still, moving)), p)
    assert clips[0].subject_consistency == pytest.approx(1.0) and clips[0].dynamic_degree == 0.0
    for j in range(6):
        assert mean.as_tuple()[j] == pytest.approx((clips[0].as_tuple()[j] + clips[1].as_tuple()[j]) / 2)


# -- golden --------------------------------------------------------------------------

def test_fixture_means_match_oracle(fixture_result):
    raw = json.loads((GOLDEN / "raw_means.json").read_text())["aggregate"]
    agg = fixture_result.report.aggregate
    for name in STORYBOARD_DIMENSIONS + ("text_image_alignment", "character_consistency"):
        assert abs(getattr(agg, name) - raw[name]) < TOL, name
    for got, want in zip(agg.video.as_tuple(), raw["video"]):
        assert abs(got - want) < TOL


def test_fixture_per_item_match_oracle(fixture_result):
    raw = {it["id"]: it for it in json.loads((GOLDEN / "raw_means.json").read_text())["items"]}
    for rep in fixture_result.report.per_item:
        want = raw[rep.item_id]
        assert abs(rep.text_image_alignment - want["tia"]) < TOL
        assert abs(rep.character_consistency - want["cc"]) < TOL
        assert rep.character_consistency_incomplete == want["incomplete"]
        assert all(abs(a - b) < TOL for a, b in zip(rep.video.as_tuple(), want["video"]))


def test_report_and_table_match_golden(fixture_result):
    assert report_document(fixture_result.report) == (GOLDEN / "report.json").read_text()
    assert report_table(fixture_result.report) == (GOLDEN / "table.txt").read_text()


def test_table_scales_video_metrics(fixture_result):
    agg = fixture_result.report.aggregate
    row = report_table(fixture_result.report).splitlines()[2]
    cells = [c.strip() for c in row.strip("|").split("|")]
    assert cells[7] == f"{agg.video.subject_consistency * 100:.2f}"
    assert cells[5] == f"{agg.text_image_alignment:.2f}"
