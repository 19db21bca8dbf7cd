"""Benchmark harness: dataset loading, judged storyboard scores, image and
video metrics, and report aggregation across items.

Dataset layout (``<root>/manifest.json``)::

    {"schema_version": 1,
     "styles":     [{"id": ..., "text": ...}],
     "references": [{"id": ..., "image": "<relative path>", "gender": ..., "age_group": ...}],
     "items":      [{"id": ..., "theme": ..., "style": <style id>, "reference": <reference id>}]}

System outputs (any generator can emit this)::

    <outputs>/item_<id>/board_<i>.txt
    <outputs>/item_<id>/key_<i>.<ext>
    <outputs>/item_<id>/clip_<i>.<ext>
    <outputs>/item_<id>/manifest.json      (optional, not scored)
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import domain
from .domain import (
    STORYBOARD_DIMENSIONS,
    VIDEO_METRICS,
    AggregateScores,
    AssetRef,
    DimensionScore,
    EvalReport,
    ItemReport,
    Storyboard,
    StoryboardScore,
    VideoScoreVector,
)
from .macf import format_boards
from .metrics import (
    MetricConfig,
    MetricUnavailable,
    clip_similarity,
    combine_consistency,
    cosine,
    pose_diversity,
    video_scores,
)
from .providers.base import ChatRequest, Part, ProviderSet
from .store import AssetStore
from .structured import ParseError, ask_structured
from .templates import TemplateLibrary

BENCHMARK_VERSION = 1
REPORT_DECIMALS = 6
TEMPLATE_CAVEAT = (
    "storyboard scores depend on the judge model and the bundled judge template; "
    "compare them only across runs that used both unchanged"
)


class BenchmarkError(ValueError):
    pass


class OutputError(ValueError):
    pass


@dataclass(frozen=True)
class StyleEntry:
    id: str
    text: str


@dataclass(frozen=True)
class ReferenceEntry:
    id: str
    image: Path
    gender: str = ""
    age_group: str = ""


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    theme_text: str
    style_id: str
    reference_id: str


@dataclass(frozen=True)
class Benchmark:
    root: Path
    styles: Mapping[str, StyleEntry]
    references: Mapping[str, ReferenceEntry]
    items: tuple[BenchmarkItem, ...]


def _entries(doc: Mapping[str, Any], key: str, required: Sequence[str]) -> list[dict[str, Any]]:
    entries = doc.get(key)
    if not isinstance(entries, list) or not entries:
        raise BenchmarkError(f"manifest: '{key}' must be a nonempty list")
    seen: set[str] = set()
    out = []
    for n, e in enumerate(entries):
        if not isinstance(e, dict):
            raise BenchmarkError(f"manifest: {key}[{n}] is not an object")
        for r in required:
            if not isinstance(e.get(r), str) or not e[r].strip():
                raise BenchmarkError(f"manifest: {key}[{n}] needs a nonempty '{r}'")
        if e["id"] in seen:
            raise BenchmarkError(f"manifest: duplicate {key[:-1]} id {e['id']!r}")
        seen.add(e["id"])
        out.append(e)
    return out


def load_benchmark(path: str | Path) -> Benchmark:
    """Load and check a dataset manifest. ``path`` is the manifest file or its directory."""
    path = Path(path)
    manifest = path / "manifest.json" if path.is_dir() else path
    try:
        doc = json.loads(manifest.read_text())
    except FileNotFoundError:
        raise BenchmarkError(f"benchmark manifest not found: {manifest}") from None
    except json.JSONDecodeError as exc:
        raise BenchmarkError(f"benchmark manifest is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise BenchmarkError("manifest root must be an object")
    if doc.get("schema_version") != BENCHMARK_VERSION:
        raise BenchmarkError(f"unsupported benchmark schema_version {doc.get('schema_version')!r}")
    root = manifest.parent
    styles = {e["id"]: StyleEntry(e["id"], e["text"]) for e in _entries(doc, "styles", ("id", "text"))}
    refs = {}
    for e in _entries(doc, "references", ("id", "image")):
        image = root / e["image"]
        if not image.is_file():
            raise BenchmarkError(f"reference {e['id']!r}: image {e['image']} is missing")
        refs[e["id"]] = ReferenceEntry(e["id"], image, e.get("gender", ""), e.get("age_group", ""))
    items = []
    for e in _entries(doc, "items", ("id", "theme", "style", "reference")):
        if e["style"] not in styles:
            raise BenchmarkError(f"item {e['id']!r}: unknown style {e['style']!r}")
        if e["reference"] not in refs:
            raise BenchmarkError(f"item {e['id']!r}: unknown reference {e['reference']!r}")
        items.append(BenchmarkItem(e["id"], e["theme"], e["style"], e["reference"]))
    return Benchmark(root, styles, refs, tuple(items))


# -- system outputs --------------------------------------------------------

_FILE = re.compile(r"^(board|key|clip)_(\d+)(\.[A-Za-z0-9]+)?$")


@dataclass(frozen=True)
class SystemOutput:
    item_id: str
    storyboards: tuple[Storyboard, ...]
    keyframes: tuple[AssetRef, ...]
    videos: tuple[AssetRef, ...]
    manifest: Optional[Path] = None


def load_output(item_dir: str | Path, store: AssetStore, item_id: str | None = None) -> SystemOutput:
    """Read one ``item_<id>`` directory and import its media into ``store``."""
    item_dir = Path(item_dir)
    if not item_dir.is_dir():
        raise OutputError(f"no output directory {item_dir}")
    item_id = item_id or item_dir.name.removeprefix("item_")
    found: dict[str, dict[int, Path]] = {"board": {}, "key": {}, "clip": {}}
    for f in sorted(item_dir.iterdir()):
        m = _FILE.match(f.name)
        if not m:
            continue
        kind, idx = m.group(1), int(m.group(2))
        if kind == "board" and m.group(3) != ".txt":
            continue
        if idx in found[kind]:
            raise OutputError(f"item {item_id}: two files for {kind}_{idx}")
        found[kind][idx] = f
    indices = sorted(found["board"])
    if not indices:
        raise OutputError(f"item {item_id}: no storyboards")
    if indices != list(range(1, len(indices) + 1)):
        raise OutputError(f"item {item_id}: storyboard indices must be 1..k, got {indices}")
    for kind in ("key", "clip"):
        if sorted(found[kind]) != indices:
            raise OutputError(f"item {item_id}: {kind} indices {sorted(found[kind])} do not match storyboards")
    from .pipeline import image_size

    boards, keys, clips = [], [], []
    for i in indices:
        text = found["board"][i].read_text().strip()
        if not text:
            raise OutputError(f"item {item_id}: board_{i}.txt is empty")
        boards.append(Storyboard(i, text))
        data = found["key"][i].read_bytes()
        w, h = image_size(data)
        keys.append(store.put(data, "image", width=w, height=h))
        clips.append(store.put(found["clip"][i].read_bytes(), "video"))
    manifest = item_dir / "manifest.json"
    return SystemOutput(item_id, tuple(boards), tuple(keys), tuple(clips), manifest if manifest.exists() else None)


# -- storyboard judge ------------------------------------------------------


@dataclass(frozen=True)
class JudgeOutcome:
    """``status`` is ``accepted`` (first reply valid), ``schema_violation``
    (first reply rejected, repair accepted) or ``unscored``."""

    score: Optional[StoryboardScore]
    status: str
    violations: tuple[str, ...] = ()


def _judge_convert(doc: Mapping[str, Any]) -> StoryboardScore:
    dims = tuple(DimensionScore(d["name"], d["score"], d["reason"].strip()) for d in doc["dimensions"])
    score = StoryboardScore(tuple(sorted(dims, key=lambda d: STORYBOARD_DIMENSIONS.index(d.name))))
    problems = domain.validate(score)
    if problems:
        raise ParseError("; ".join(problems))
    return score


def score_storyboards(
    storyboards: Sequence[Storyboard],
    theme: str,
    providers: ProviderSet,
    templates: TemplateLibrary | None = None,
    *,
    item_id: str | None = None,
) -> JudgeOutcome:
    if not storyboards:
        raise ValueError("no storyboards to judge")
    tpl = (templates or TemplateLibrary.load())["eval/judge"]
    request = ChatRequest(
        system=tpl.system,
        parts=(Part(text=tpl.render({"theme": theme, "storyboards": format_boards(storyboards)})),),
        schema_id="storyboard_judge",
        route="judge",
        hints={"index": item_id} if item_id is not None else {},
    )
    try:
        result = ask_structured(providers.chat_for("judge"), request, _judge_convert)
    except ParseError as exc:
        return JudgeOutcome(None, "unscored", (str(exc),))
    if result.repairs:
        return JudgeOutcome(result.value, "schema_violation", (result.first_error,))
    return JudgeOutcome(result.value, "accepted")


# -- image and video metrics -----------------------------------------------


@dataclass(frozen=True)
class ImageAudit:
    image_text: tuple[float, ...]
    image_reference: tuple[float, ...]
    s_clip: float
    s_pose: Optional[float]
    text_image_alignment: float
    character_consistency: float
    incomplete: bool


def evaluate_images(
    output: SystemOutput, reference: AssetRef, providers: ProviderSet, config: MetricConfig | None = None
) -> ImageAudit:
    cfg = config or MetricConfig()
    if not output.keyframes:
        raise ValueError("no images to evaluate")
    emb = providers.embedder
    image_vecs = [emb.embed_image(k) for k in output.keyframes]
    text_vecs = [emb.embed_text(b.text) for b in output.storyboards]
    ref_vec = emb.embed_image(reference)
    i2t = tuple(cosine(i, t) for i, t in zip(image_vecs, text_vecs))
    i2r = tuple(cosine(i, ref_vec) for i in image_vecs)
    s_clip = clip_similarity(image_vecs, ref_vec)
    try:
        s_pose: Optional[float] = pose_diversity([providers.pose.estimate_pose(k) for k in output.keyframes])
    except MetricUnavailable:
        s_pose = None
    cc, incomplete = combine_consistency(s_clip, s_pose, cfg.alpha)
    return ImageAudit(i2t, i2r, s_clip, s_pose, sum(i2t) / len(i2t), cc, incomplete)


def mean_vectors(vectors: Sequence[VideoScoreVector]) -> VideoScoreVector:
    if not vectors:
        raise ValueError("no score vectors to average")
    return VideoScoreVector.from_values([sum(v.as_tuple()[j] for v in vectors) / len(vectors)
                                         for j in range(len(VIDEO_METRICS))])


def evaluate_videos(
    output: SystemOutput, providers: ProviderSet, config: MetricConfig | None = None
) -> tuple[VideoScoreVector, tuple[VideoScoreVector, ...]]:
    """Item score (mean over its clips) and the per-clip vectors."""
    if not output.videos:
        raise ValueError("no videos to evaluate")
    per_clip = tuple(video_scores(providers.video_analyzer, v, config) for v in output.videos)
    return mean_vectors(per_clip), per_clip


# -- aggregation -----------------------------------------------------------


def aggregate(per_item: Sequence[ItemReport], *, judge: str, notes: Sequence[str] = ()) -> EvalReport:
    """Means across items. Storyboard dimensions average over judged items only;
    unscored items are counted, not zeroed."""
    items = tuple(per_item)
    if not items:
        raise ValueError("nothing to aggregate: no items")
    n = len(items)
    scored = [i.storyboard for i in items if i.storyboard is not None]
    dims: dict[str, Optional[float]] = {}
    for d in STORYBOARD_DIMENSIONS:
        dims[d] = sum(float(s.score_of(d)) for s in scored) / len(scored) if scored else None
    agg = AggregateScores(
        **dims,
        text_image_alignment=sum(i.text_image_alignment for i in items) / n,
        character_consistency=sum(i.character_consistency for i in items) / n,
        video=mean_vectors([i.video for i in items]),
    )
    return EvalReport(items, agg, n, len(scored), judge, tuple(notes))


@dataclass
class EvalResult:
    report: EvalReport
    judge_outcomes: dict[str, JudgeOutcome] = field(default_factory=dict)
    image_audits: dict[str, ImageAudit] = field(default_factory=dict)
    clip_scores: dict[str, tuple[VideoScoreVector, ...]] = field(default_factory=dict)


def evaluate_item(
    item: BenchmarkItem,
    output: SystemOutput,
    reference: AssetRef,
    providers: ProviderSet,
    config: MetricConfig,
    templates: TemplateLibrary,
) -> tuple[ItemReport, JudgeOutcome, ImageAudit, tuple[VideoScoreVector, ...]]:
    judged = score_storyboards(output.storyboards, item.theme_text, providers, templates, item_id=item.item_id)
    images = evaluate_images(output, reference, providers, config)
    video, clips = evaluate_videos(output, providers, config)
    notes = []
    if judged.status == "unscored":
        notes.append("storyboards unscored: judge reply unusable after one repair")
    elif judged.status == "schema_violation":
        notes.append("judge reply repaired after a schema violation")
    if images.incomplete:
        notes.append("character consistency incomplete: fewer than two detected poses")
    report = ItemReport(
        item_id=item.item_id,
        storyboard=judged.score,
        text_image_alignment=images.text_image_alignment,
        character_consistency=images.character_consistency,
        character_consistency_incomplete=images.incomplete,
        video=video,
        notes=tuple(notes),
    )
    return report, judged, images, clips


def run_eval(
    benchmark: Benchmark,
    outputs_dir: str | Path,
    providers: ProviderSet,
    store: AssetStore,
    *,
    config: MetricConfig | None = None,
    templates: TemplateLibrary | None = None,
    max_parallel: int = 4,
) -> EvalResult:
    cfg = config or MetricConfig()
    templates = templates or TemplateLibrary.load()
    outputs_dir = Path(outputs_dir)
    ref_assets: dict[str, AssetRef] = {}
    from .pipeline import image_size

    for rid, ref in benchmark.references.items():
        data = ref.image.read_bytes()
        w, h = image_size(data)
        ref_assets[rid] = store.put(data, "image", width=w, height=h)
    loaded = [load_output(outputs_dir / f"item_{it.item_id}", store, it.item_id) for it in benchmark.items]

    def one(pair):
        item, output = pair
        return evaluate_item(item, output, ref_assets[item.reference_id], providers, cfg, templates)

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        results = list(pool.map(one, zip(benchmark.items, loaded)))
    judge = providers.chat_for("judge").name
    notes = (f"judge: {judge}", TEMPLATE_CAVEAT,
             "video metrics are stored in [0, 1]; the table shows them multiplied by 100")
    report = aggregate([r[0] for r in results], judge=judge, notes=notes)
    out = EvalResult(report)
    for item, (_, judged, audit, clips) in zip(benchmark.items, results):
        out.judge_outcomes[item.item_id] = judged
        out.image_audits[item.item_id] = audit
        out.clip_scores[item.item_id] = clips
    return out


# -- rendering -------------------------------------------------------------


def _round(data: Any, places: int) -> Any:
    if isinstance(data, float):
        return round(data, places)
    if isinstance(data, list):
        return [_round(x, places) for x in data]
    if isinstance(data, dict):
        return {k: _round(v, places) for k, v in data.items()}
    return data


def report_document(report: EvalReport) -> str:
    """The report as a versioned JSON document with 6-decimal values."""
    body: dict[str, Any] = {"schema_version": domain.SCHEMA_VERSION, "type": "EvalReport"}
    body.update(_round(domain.to_data(report), REPORT_DECIMALS))
    return json.dumps(body, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


TABLE_COLUMNS = (
    ("SI", "story_interest", 1.0),
    ("TC", "temporal_continuity", 1.0),
    ("BD", "behavioral_diversity", 1.0),
    ("TH", "thematic_consistency", 1.0),
    ("TIA", "text_image_alignment", 1.0),
    ("CC", "character_consistency", 1.0),
    ("SubC", "subject_consistency", 100.0),
    ("BgC", "background_consistency", 100.0),
    ("MS", "motion_smoothness", 100.0),
    ("DD", "dynamic_degree", 100.0),
    ("AQ", "aesthetic_quality", 100.0),
    ("IQ", "imaging_quality", 100.0),
)


def display_value(value: Optional[float], scale: float) -> str:
    return "n/a" if value is None else f"{value * scale:.2f}"


def report_table(report: EvalReport, system: str = "system") -> str:
    """A one-row comparison table; video metrics are shown ×100, all values to 2 decimals."""
    a = report.aggregate
    values = []
    for _, name, scale in TABLE_COLUMNS:
        v = getattr(a.video, name) if name in VIDEO_METRICS else getattr(a, name)
        values.append(display_value(v, scale))
    header = ["System"] + [c[0] for c in TABLE_COLUMNS]
    row = [system] + values
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]
    fmt = lambda cells: "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"
    rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    lines = [fmt(header), rule, fmt(row), "",
             f"items: {report.items_total}, storyboard-scored: {report.items_storyboard_scored}",
             f"judge: {report.judge}"]
    return "\n".join(lines) + "\n"
