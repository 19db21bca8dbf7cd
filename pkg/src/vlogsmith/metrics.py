"""Metric computations over embeddings, keypoints, flow and frame scores.

Everything here is a pure function of provider outputs. Video metrics are
clamped into [0, 1] so they can be compared componentwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .domain import VideoScoreVector
from .providers.base import VideoAnalyzer

SQRT2 = math.sqrt(2.0)


class MetricUnavailable(ValueError):
    """Not enough usable input to compute a metric."""


@dataclass(frozen=True)
class MetricConfig:
    alpha: float = 0.5
    embedding_dim: int = 64
    keypoint_count: int = 17
    dynamic_degree_flow_threshold: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.dynamic_degree_flow_threshold > 0:
            raise ValueError("dynamic_degree_flow_threshold must be > 0")


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(min(1.0, max(-1.0, float(a @ b) / (na * nb))))


def text_image_alignment(image_vecs: Sequence[Sequence[float]], text_vecs: Sequence[Sequence[float]]) -> float:
    """Mean cosine between each image embedding and its storyboard's text embedding."""
    if len(image_vecs) != len(text_vecs):
        raise ValueError(f"{len(image_vecs)} images vs {len(text_vecs)} storyboards")
    if not image_vecs:
        raise MetricUnavailable("no image/storyboard pairs")
    return float(np.mean([cosine(i, t) for i, t in zip(image_vecs, text_vecs)]))


def pose_diversity(keypoint_sets: Sequence[Sequence[tuple[float, float]]]) -> float:
    """Mean pairwise per-keypoint distance, normalized by the unit-square diagonal.

    Empty sets (no person detected) are skipped. Raises ``MetricUnavailable``
    with fewer than two usable sets.
    """
    usable = [np.asarray(s, dtype=float) for s in keypoint_sets if len(s) > 0]
    if len(usable) < 2:
        raise MetricUnavailable("pose diversity needs at least two detected poses")
    p = usable[0].shape
    if any(s.shape != p or s.ndim != 2 or s.shape[1] != 2 for s in usable):
        raise ValueError("keypoint sets must share shape (P, 2)")
    pts = np.clip(np.stack(usable), 0.0, 1.0)
    dists = [np.linalg.norm(pts[a] - pts[b], axis=1).mean() / SQRT2 for a, b in combinations(range(len(pts)), 2)]
    return float(np.mean(dists))


def clip_similarity(image_vecs: Sequence[Sequence[float]], reference_vec: Sequence[float]) -> float:
    if not image_vecs:
        raise MetricUnavailable("no images")
    return float(np.mean([cosine(v, reference_vec) for v in image_vecs]))


def combine_consistency(s_clip: float, s_pose: float | None, alpha: float = 0.5) -> tuple[float, bool]:
    """Weighted identity/pose blend. Returns ``(score, incomplete)``; without a
    pose term the score is the identity similarity alone."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if s_pose is None:
        return s_clip, True
    return alpha * s_clip + (1.0 - alpha) * s_pose, False


def character_consistency(
    image_vecs: Sequence[Sequence[float]],
    reference_vec: Sequence[float],
    keypoint_sets: Sequence[Sequence[tuple[float, float]]],
    alpha: float = 0.5,
) -> tuple[float, bool]:
    s_clip = clip_similarity(image_vecs, reference_vec)
    try:
        s_pose: float | None = pose_diversity(keypoint_sets)
    except MetricUnavailable:
        s_pose = None
    return combine_consistency(s_clip, s_pose, alpha)


def frame_consistency(features: Sequence[Sequence[float]]) -> float:
    """Mean of max(0, cosine) over consecutive frame pairs."""
    if len(features) < 2:
        raise MetricUnavailable("frame consistency needs at least two frames")
    sims = [max(0.0, cosine(a, b)) for a, b in zip(features, features[1:])]
    return _clamp01(float(np.mean(sims)))


def motion_smoothness(flows: Sequence[float], provider_score: float | None = None) -> float:
    """Provider interpolation score when available, else a flow-acceleration fallback.

    Fallback: ``1 - mean|f[t+1] - f[t]| / max(f)`` over the per-pair flow
    magnitudes ``f`` (the change of per-pair displacement is the second
    difference of frame positions). Needs at least three frames.
    """
    if provider_score is not None:
        return _clamp01(float(provider_score))
    f = np.abs(np.asarray(flows, dtype=float))
    if f.size < 2:
        raise MetricUnavailable("motion smoothness needs at least three frames")
    peak = f.max()
    if peak == 0.0:
        return 1.0
    accel = np.abs(np.diff(f)).mean()
    return _clamp01(1.0 - accel / peak)


def dynamic_degree(flows: Sequence[float], threshold: float = 0.05) -> float:
    """Fraction of frame pairs whose mean flow magnitude exceeds ``threshold``."""
    if len(flows) < 1:
        raise MetricUnavailable("dynamic degree needs at least two frames")
    return sum(1 for f in flows if f > threshold) / len(flows)


def mean_frame_score(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise MetricUnavailable("no frame scores")
    return _clamp01(float(np.mean([_clamp01(float(s)) for s in scores])))


def video_scores(analyzer: VideoAnalyzer, video, config: MetricConfig | None = None) -> VideoScoreVector:
    cfg = config or MetricConfig()
    flows = analyzer.estimate_flow(video)
    return VideoScoreVector(
        subject_consistency=frame_consistency(analyzer.embed_frames(video, "subject")),
        background_consistency=frame_consistency(analyzer.embed_frames(video, "background")),
        motion_smoothness=motion_smoothness(flows, analyzer.interpolation_smoothness(video)),
        dynamic_degree=dynamic_degree(flows, cfg.dynamic_degree_flow_threshold),
        aesthetic_quality=mean_frame_score(analyzer.score_frames(video, "aesthetic")),
        imaging_quality=mean_frame_score(analyzer.score_frames(video, "imaging")),
    )
