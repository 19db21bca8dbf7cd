"""Theme-driven vlog planning, generation with quality feedback, and benchmark scoring."""

from .config import RunConfig, load_config, parse_config
from .domain import PlanBundle, ThemeSpec, VlogManifest, dumps, loads, validate
from .evaluation import aggregate, load_benchmark, run_eval, score_storyboards
from .genfrm import Frm, FrmConfig, dominates
from .macf import Macf, MacfConfig, StageError
from .metrics import MetricConfig, character_consistency, pose_diversity
from .pipeline import Pipeline, assemble

__version__ = "0.1.0"

__all__ = [
    "Frm",
    "FrmConfig",
    "Macf",
    "MacfConfig",
    "MetricConfig",
    "Pipeline",
    "PlanBundle",
    "RunConfig",
    "StageError",
    "ThemeSpec",
    "VlogManifest",
    "aggregate",
    "assemble",
    "character_consistency",
    "dominates",
    "dumps",
    "load_benchmark",
    "load_config",
    "loads",
    "parse_config",
    "pose_diversity",
    "run_eval",
    "score_storyboards",
    "validate",
]
