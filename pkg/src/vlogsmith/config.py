"""Run configuration: a versioned YAML/JSON file, strictly checked before any provider call."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .genfrm import FrmConfig
from .macf import MacfConfig
from .metrics import MetricConfig
from .providers.base import ConfigError, ProviderConfig, ProviderSet, RetryPolicy
from .store import AssetStore

CONFIG_VERSION = 1
SERVICE_ROLES = (
    "chat",
    "image_edit",
    "image_to_video",
    "text_to_music",
    "text_to_speech",
    "embedder",
    "pose",
    "video_analyzer",
)
PROVIDER_KINDS = ("mock", "http")


@dataclass(frozen=True)
class MockOptions:
    frames: int = 16
    clip_duration: float = 5.0
    pass_rate: float = 0.75
    chaos: float = 0.0
    fail: tuple[str, ...] = ()
    interpolation: bool = False


@dataclass(frozen=True)
class PipelineOptions:
    max_parallel: int = 4
    bgm_gain_db: float = -12.0
    muxer: str | None = None
    output_name: str = "vlog.mp4"


@dataclass(frozen=True)
class RunConfig:
    providers: str = "mock"
    services: Mapping[str, ProviderConfig] = field(default_factory=dict)
    mock: MockOptions = field(default_factory=MockOptions)
    macf: MacfConfig = field(default_factory=MacfConfig)
    frm: FrmConfig = field(default_factory=FrmConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)

    def __post_init__(self) -> None:
        if self.providers not in PROVIDER_KINDS:
            raise ConfigError(f"providers must be one of {PROVIDER_KINDS}")
        if self.pipeline.max_parallel < 1:
            raise ConfigError("pipeline.max_parallel must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["services"] = {k: asdict(v) for k, v in sorted(self.services.items())}
        return {"schema_version": CONFIG_VERSION, **out}

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, **changes: Any) -> RunConfig:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return RunConfig(**data)


def _build(cls: type, data: Any, where: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(data)
    for key, value in list(kwargs.items()):
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _service(role: str, data: Any) -> ProviderConfig:
    if not isinstance(data, Mapping):
        raise ConfigError(f"services.{role}: expected a mapping")
    data = dict(data)
    data["retry"] = _build(RetryPolicy, data.get("retry"), f"services.{role}.retry")
    data["options"] = dict(data.get("options") or {})
    return _build(ProviderConfig, data, f"services.{role}")


def parse_config(data: Any) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    version = data.pop("schema_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    unknown = sorted(set(data) - {"providers", "macf", "frm", "metrics", "pipeline"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    prov = dict(data.get("providers") or {})
    bad = sorted(set(prov) - {"kind", "mock", "services"})
    if bad:
        raise ConfigError(f"providers: unknown key(s) {', '.join(bad)}")
    services = {}
    for role, svc in (prov.get("services") or {}).items():
        base = role.split(":", 1)[0]
        if base not in SERVICE_ROLES:
            raise ConfigError(f"services: unknown role {role!r}")
        services[role] = _service(role, svc)
    return RunConfig(
        providers=prov.get("kind", "mock"),
        services=services,
        mock=_build(MockOptions, prov.get("mock"), "providers.mock"),
        macf=_build(MacfConfig, data.get("macf"), "macf"),
        frm=_build(FrmConfig, data.get("frm"), "frm"),
        metrics=_build(MetricConfig, data.get("metrics"), "metrics"),
        pipeline=_build(PipelineOptions, data.get("pipeline"), "pipeline"),
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    return parse_config(data)


def build_providers(config: RunConfig, store: AssetStore, seed: int) -> ProviderSet:
    """Instantiate the provider set named by the config against ``store``."""
    from .providers import http, mock

    if config.providers == "mock":
        opts = config.mock
        chat = mock.MockChatModel(seed, pass_rate=opts.pass_rate, chaos=opts.chaos, fail="chat" in opts.fail)
        pset = mock.mock_providers(
            store,
            seed,
            image_config=config.services.get("image_edit"),
            chat=chat,
            dim=config.metrics.embedding_dim,
            keypoints=config.metrics.keypoint_count,
            frames=opts.frames,
            clip_duration=opts.clip_duration,
            fail=opts.fail,
        )
        if opts.interpolation:
            pset.video_analyzer = mock.MockVideoAnalyzer(store, config.metrics.embedding_dim, interpolation=True)
        return pset

    missing = [r for r in SERVICE_ROLES if r not in config.services]
    if missing:
        raise ConfigError(f"http providers need services for: {', '.join(missing)}")
    s = config.services
    pset = ProviderSet(
        chat=http.HttpChatModel(s["chat"], store),
        image_editor=http.HttpImageEditor(s["image_edit"], store),
        video_generator=http.HttpVideoGenerator(s["image_to_video"], store),
        music=http.HttpMusicGenerator(s["text_to_music"], store),
        speech=http.HttpSpeechSynthesizer(s["text_to_speech"], store),
        embedder=http.HttpEmbedder(s["embedder"], store, config.metrics.embedding_dim),
        pose=http.HttpPoseEstimator(s["pose"], store),
        video_analyzer=http.HttpVideoAnalyzer(s["video_analyzer"], store),
    )
    for role, svc in s.items():
        if role.startswith("chat:"):
            pset.chat_models[role.split(":", 1)[1]] = http.HttpChatModel(svc, store)
    return pset
