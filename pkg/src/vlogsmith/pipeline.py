"""End-to-end orchestration with per-stage checkpoints and resume.

Run directory layout::

    runs/<id>/state.json          RunState, rewritten atomically after every stage
    runs/<id>/theme.json          ThemeSpec
    runs/<id>/stylize.json        stylized reference (AssetRef)
    runs/<id>/plan.json           PlanBundle (plan_partial.json after a failed plan stage)
    runs/<id>/idx_<i>/keyframe.json, video.json
    runs/<id>/audio.json          AudioTracks
    runs/<id>/manifest.json       VlogManifest
    runs/<id>/assets/..           content-addressed asset store
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

from PIL import Image, UnidentifiedImageError

from . import domain
from .config import RunConfig, build_providers
from .domain import (
    RUN_STAGES,
    ArtifactDigest,
    AssetRef,
    AudioTracks,
    KeyframeRecord,
    ManifestClip,
    PlanBundle,
    Provenance,
    ProviderIdentity,
    RunState,
    StageRecord,
    ThemeSpec,
    VideoRecord,
    VlogManifest,
)
from .genfrm import Frm
from .macf import Macf, MacfCheckpoint, StageError
from .providers.base import PreconditionError, ProviderSet
from .store import AssetStore, IntegrityError, atomic_write, sha256_hex
from .templates import TemplateLibrary

log = logging.getLogger(__name__)

ProviderFactory = Callable[[AssetStore, int], ProviderSet]


class RunInterrupted(RuntimeError):
    """Raised by ``halt_after``: the run stopped cleanly at a stage boundary."""


class CheckpointCorrupted(RuntimeError):
    pass


class RunLocked(RuntimeError):
    pass


class MissingArtifact(RuntimeError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _checkpoint_doc(cp: MacfCheckpoint) -> str:
    body = {
        "schema_version": domain.SCHEMA_VERSION,
        "type": "MacfCheckpoint",
        "character": domain.to_data(cp.character),
        "story": domain.to_data(cp.story),
        "storyboards": domain.to_data(cp.storyboards),
        "traces": domain.to_data(cp.traces),
    }
    return json.dumps(body, indent=2, ensure_ascii=False) + "\n"


def _load_checkpoint(text: str) -> MacfCheckpoint:
    body = json.loads(text)
    if body.get("type") != "MacfCheckpoint" or body.get("schema_version") != domain.SCHEMA_VERSION:
        raise CheckpointCorrupted("plan_partial.json is not a MACF checkpoint")
    boards = body["storyboards"]
    return MacfCheckpoint(
        character=domain.from_data(domain.CharacterProfile, body["character"]) if body["character"] else None,
        story=domain.from_data(domain.Story, body["story"]) if body["story"] else None,
        storyboards=tuple(domain.from_data(domain.Storyboard, b) for b in boards) if boards is not None else None,
        traces=tuple(domain.from_data(domain.StageTrace, t) for t in body["traces"]),
    )


def image_size(data: bytes) -> tuple[int, int]:
    """Pixel size of an image file, or of a mock image document."""
    from .providers.mock import decode_mock

    mock = decode_mock(data)
    if mock is not None and mock.get("kind") == "image":
        return int(mock["width"]), int(mock["height"])
    try:
        from io import BytesIO

        with Image.open(BytesIO(data)) as img:
            return img.size
    except (UnidentifiedImageError, OSError) as exc:
        raise PreconditionError(f"reference is not a readable image: {exc}") from None


def mux_command(manifest_clips: Sequence[ManifestClip], bgm: AssetRef, gain_db: float, total: float,
                output: str) -> tuple[str, ...]:
    """An ffmpeg invocation that lays the manifest out; paths are relative to the run directory."""
    k = len(manifest_clips)
    args: list[str] = ["ffmpeg", "-y"]
    for c in manifest_clips:
        args += ["-i", c.video.uri]
    for c in manifest_clips:
        args += ["-i", c.speech.uri]
    args += ["-stream_loop", "-1", "-i", bgm.uri]
    video_in = "".join(f"[{i}:v]" for i in range(k))
    parts = [f"{video_in}concat=n={k}:v=1:a=0[v]"]
    start = 0.0
    speech_labels = []
    for i, c in enumerate(manifest_clips):
        delay = int(round((start + c.speech_offset) * 1000))
        parts.append(f"[{k + i}:a]atrim=0:{c.clip_duration:.3f},adelay={delay}|{delay}[s{i + 1}]")
        speech_labels.append(f"[s{i + 1}]")
        start += c.clip_duration
    parts.append(f"[{2 * k}:a]atrim=0:{total:.3f},volume={gain_db:.1f}dB[bgm]")
    parts.append(f"{''.join(speech_labels)}[bgm]amix=inputs={k + 1}:normalize=0[a]")
    args += ["-filter_complex", ";".join(parts), "-map", "[v]", "-map", "[a]", "-t", f"{total:.3f}", output]
    return tuple(args)


def assemble(
    plan: PlanBundle,
    stylized_ref: AssetRef,
    keyframe_records: Sequence[KeyframeRecord],
    video_records: Sequence[VideoRecord],
    audio: AudioTracks,
    *,
    provenance: Provenance,
    bgm_gain_db: float = -12.0,
    output_name: str = "vlog.mp4",
) -> VlogManifest:
    videos = {r.index: r for r in video_records}
    keys = {r.index: r for r in keyframe_records}
    clips = []
    for board in plan.storyboards:
        i = board.index
        if i not in keys:
            raise MissingArtifact(f"no accepted keyframe for index {i}")
        if i not in videos:
            raise MissingArtifact(f"no accepted video for index {i}")
        if i > len(audio.speeches):
            raise MissingArtifact(f"no speech track for index {i}")
        video = videos[i].accepted
        speech = audio.speeches[i - 1]
        clips.append(ManifestClip(
            index=i,
            video=video,
            speech=speech,
            speech_offset=0.0,
            clip_duration=float(video.duration),
            speech_duration=float(speech.duration),
            speech_trimmed=speech.duration > video.duration,
        ))
    total = sum(c.clip_duration for c in clips)
    bgm_len = float(audio.bgm.duration)
    fit = "loop" if bgm_len < total else "trim" if bgm_len > total else "exact"
    return VlogManifest(
        stylized_reference=stylized_ref,
        clips=tuple(clips),
        bgm=audio.bgm,
        bgm_gain=bgm_gain_db,
        bgm_fit=fit,
        total_duration=total,
        mux_command=mux_command(clips, audio.bgm, bgm_gain_db, total, output_name),
        provenance=provenance,
    )


@dataclass
class _Run:
    run_id: str
    root: Path
    store: AssetStore
    state: RunState


class Pipeline:
    def __init__(
        self,
        config: RunConfig | None = None,
        runs_root: str | os.PathLike = "runs",
        *,
        provider_factory: ProviderFactory | None = None,
        templates: TemplateLibrary | None = None,
    ):
        self.config = config or RunConfig()
        self.runs_root = Path(runs_root)
        self.provider_factory = provider_factory or (lambda store, seed: build_providers(self.config, store, seed))
        self.templates = templates or TemplateLibrary.load()
        self.last_providers: ProviderSet | None = None

    # -- run directory -----------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        return self.runs_root / run_id

    def _write_doc(self, run: _Run, rel: str, text: str) -> ArtifactDigest:
        atomic_write(run.root / rel, text.encode())
        return ArtifactDigest(rel, sha256_hex(text.encode()))

    def _read_doc(self, run: _Run, rel: str, expected: type) -> Any:
        try:
            return domain.loads((run.root / rel).read_text(), expected)
        except FileNotFoundError:
            raise CheckpointCorrupted(f"{rel} is missing") from None
        except domain.SchemaError as exc:
            raise CheckpointCorrupted(f"{rel}: {exc}") from None

    def _save_state(self, run: _Run) -> None:
        atomic_write(run.root / "state.json", domain.dumps(run.state).encode())

    def new_run(
        self,
        theme: str,
        style: str,
        reference: bytes | str | os.PathLike,
        *,
        voice: bytes | str | os.PathLike | None = None,
        seed: int = 0,
        run_id: str | None = None,
    ) -> str:
        if not theme.strip() or not style.strip():
            raise PreconditionError("theme and style must be nonempty")
        if seed < 0:
            raise PreconditionError("seed must be unsigned")
        ref_bytes = reference if isinstance(reference, bytes) else Path(reference).read_bytes()
        width, height = image_size(ref_bytes)
        run_id = run_id or uuid.uuid4().hex[:12]
        root = self.run_dir(run_id)
        if (root / "state.json").exists():
            raise PreconditionError(f"run {run_id} already exists; resume it instead")
        store = AssetStore(root)
        ref = store.put(ref_bytes, "image", width=width, height=height)
        voice_ref = None
        if voice is not None:
            vb = voice if isinstance(voice, bytes) else Path(voice).read_bytes()
            voice_ref = store.put(vb, "audio", duration=float(self.config.mock.clip_duration))
        spec = ThemeSpec(theme, style, ref, voice_ref, seed)
        problems = domain.validate(spec)
        if problems:
            raise PreconditionError("; ".join(problems))
        now = _now()
        state = RunState(run_id, "stylize", (), self.config.digest(), seed, now, now)
        run = _Run(run_id, root, store, state)
        self._write_doc(run, "theme.json", domain.dumps(spec))
        atomic_write(root / "config.json", (json.dumps(self.config.to_dict(), indent=2, default=list) + "\n").encode())
        self._save_state(run)
        return run_id

    def _open(self, run_id: str) -> _Run:
        root = self.run_dir(run_id)
        try:
            state = domain.loads((root / "state.json").read_text(), RunState)
        except FileNotFoundError:
            raise PreconditionError(f"no run {run_id} under {self.runs_root}") from None
        except domain.SchemaError as exc:
            raise CheckpointCorrupted(f"state.json: {exc}") from None
        problems = domain.validate(state)
        if problems:
            raise CheckpointCorrupted("; ".join(problems))
        if state.config_digest != self.config.digest():
            raise PreconditionError(f"run {run_id} was started with a different config")
        return _Run(run_id, root, AssetStore(root), state)

    def state(self, run_id: str) -> RunState:
        return self._open(run_id).state

    # -- integrity -----------------------------------------------------------

    def _verify(self, run: _Run) -> None:
        """Check every completed artifact document and every asset it references."""
        for rec in run.state.completed:
            for art in rec.artifacts:
                path = run.root / art.path
                try:
                    data = path.read_bytes()
                except FileNotFoundError:
                    raise CheckpointCorrupted(f"{art.path} is missing") from None
                if sha256_hex(data) != art.sha256:
                    raise CheckpointCorrupted(f"{art.path} does not match its recorded hash")
                for ref in _asset_refs(json.loads(data)):
                    try:
                        run.store.verify(ref)
                    except IntegrityError as exc:
                        raise CheckpointCorrupted(str(exc)) from None
                    except KeyError:
                        raise CheckpointCorrupted(f"asset {ref.uri} is missing") from None

    def _complete(self, run: _Run, stage: str, artifacts: Sequence[ArtifactDigest]) -> None:
        nxt = RUN_STAGES[RUN_STAGES.index(stage) + 1]
        now = _now()
        run.state = domain.replace(
            run.state,
            stage=nxt,
            completed=run.state.completed + (StageRecord(stage, tuple(artifacts), now),),
            updated_at=now,
            last_error=None,
        )
        self._save_state(run)

    # -- stages --------------------------------------------------------------

    def stylize_reference(self, spec: ThemeSpec, providers: ProviderSet) -> AssetRef:
        prompt = self.templates["pipeline/stylize"].render({"style": spec.style_text})
        return providers.image_editor.edit_image(prompt, spec.reference_image)

    def _stage_stylize(self, run, spec, providers) -> list[ArtifactDigest]:
        stylized = self.stylize_reference(spec, providers)
        return [self._write_doc(run, "stylize.json", domain.dumps(stylized))]

    def _stage_plan(self, run, spec, providers) -> list[ArtifactDigest]:
        stylized = self._read_doc(run, "stylize.json", AssetRef)
        partial_path = run.root / "plan_partial.json"
        checkpoint = _load_checkpoint(partial_path.read_text()) if partial_path.exists() else None
        macf = Macf(providers, self.config.macf, self.templates)
        try:
            plan = macf.run_macf(spec, stylized, checkpoint)
        except StageError as exc:
            if exc.checkpoint is not None:
                atomic_write(partial_path, _checkpoint_doc(exc.checkpoint).encode())
            raise
        return [self._write_doc(run, "plan.json", domain.dumps(plan))]

    def _fan_out(self, items: Sequence[Any], fn: Callable[[Any], ArtifactDigest]) -> list[ArtifactDigest]:
        workers = min(self.config.pipeline.max_parallel, max(1, len(items)))
        if workers == 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="idx") as pool:
            return list(pool.map(fn, items))

    def _reuse(self, run: _Run, rel: str, expected: type) -> bool:
        """A per-index document left by an interrupted stage is reused when intact."""
        path = run.root / rel
        if not path.exists():
            return False
        try:
            doc = domain.loads(path.read_text(), expected)
            for ref in _asset_refs(domain.to_data(doc)):
                run.store.verify(ref)
        except (domain.SchemaError, IntegrityError, KeyError):
            return False
        return True

    def _stage_keyframes(self, run, spec, providers) -> list[ArtifactDigest]:
        stylized = self._read_doc(run, "stylize.json", AssetRef)
        plan = self._read_doc(run, "plan.json", PlanBundle)
        frm = Frm(providers, self.config.frm, self.config.metrics, self.templates)

        def one(board) -> ArtifactDigest:
            rel = f"idx_{board.index}/keyframe.json"
            if self._reuse(run, rel, KeyframeRecord):
                text = (run.root / rel).read_text()
                return ArtifactDigest(rel, sha256_hex(text.encode()))
            record = frm.run_image_frm(board, plan.character, stylized)
            return self._write_doc(run, rel, domain.dumps(record))

        return self._fan_out(plan.storyboards, one)

    def _stage_videos(self, run, spec, providers) -> list[ArtifactDigest]:
        plan = self._read_doc(run, "plan.json", PlanBundle)
        frm = Frm(providers, self.config.frm, self.config.metrics, self.templates)

        def one(prompt) -> ArtifactDigest:
            rel = f"idx_{prompt.index}/video.json"
            if self._reuse(run, rel, VideoRecord):
                text = (run.root / rel).read_text()
                return ArtifactDigest(rel, sha256_hex(text.encode()))
            keyframe = self._read_doc(run, f"idx_{prompt.index}/keyframe.json", KeyframeRecord)
            record = frm.run_video_frm(prompt, keyframe.accepted)
            return self._write_doc(run, rel, domain.dumps(record))

        return self._fan_out(plan.video_prompts, one)

    def _stage_audio(self, run, spec, providers) -> list[ArtifactDigest]:
        plan = self._read_doc(run, "plan.json", PlanBundle)
        frm = Frm(providers, self.config.frm, self.config.metrics, self.templates)
        bgm, speeches, voice = frm.generate_audio(plan, spec.voice_reference)
        return [self._write_doc(run, "audio.json", domain.dumps(AudioTracks(bgm, speeches, voice)))]

    def _stage_assemble(self, run, spec, providers) -> list[ArtifactDigest]:
        stylized = self._read_doc(run, "stylize.json", AssetRef)
        plan = self._read_doc(run, "plan.json", PlanBundle)
        keys = [self._read_doc(run, f"idx_{b.index}/keyframe.json", KeyframeRecord) for b in plan.storyboards]
        vids = [self._read_doc(run, f"idx_{b.index}/video.json", VideoRecord) for b in plan.storyboards]
        audio = self._read_doc(run, "audio.json", AudioTracks)
        notes = (
            "background music is generated from the music prompt alone and looped or trimmed at assembly",
            "speech starts with its clip; speech longer than the clip is trimmed to it, clips are never stretched",
            "only the story reviewer saw the stylized reference image",
            "keyframe and video quality agents decide without numeric thresholds",
        )
        if audio.voice == "provider-default":
            notes += ("no voice reference supplied; speech uses the provider's default voice",)
        provenance = Provenance(
            seed=spec.seed,
            providers=tuple(ProviderIdentity(role, name) for role, name in providers.identities()),
            config_digest=self.config.digest(),
            voice=audio.voice,
            notes=notes,
        )
        manifest = assemble(
            plan, stylized, keys, vids, audio,
            provenance=provenance,
            bgm_gain_db=self.config.pipeline.bgm_gain_db,
            output_name=self.config.pipeline.output_name,
        )
        problems = domain.validate(manifest)
        if problems:
            raise StageError("assemble", "; ".join(problems))
        for ref in _asset_refs(domain.to_data(manifest)):
            run.store.verify(ref)
        return [self._write_doc(run, "manifest.json", domain.dumps(manifest))]

    # -- driver --------------------------------------------------------------

    def run(
        self,
        theme: str,
        style: str,
        reference: bytes | str | os.PathLike,
        *,
        voice: bytes | str | os.PathLike | None = None,
        seed: int = 0,
        run_id: str | None = None,
        halt_after: str | None = None,
    ) -> VlogManifest:
        rid = self.new_run(theme, style, reference, voice=voice, seed=seed, run_id=run_id)
        return self.resume(rid, halt_after=halt_after)

    def resume(self, run_id: str, *, halt_after: str | None = None) -> VlogManifest:
        """Continue from the first incomplete stage; completed stages make no provider calls."""
        if halt_after is not None and halt_after not in RUN_STAGES[:-1]:
            raise ValueError(f"halt_after must be one of {RUN_STAGES[:-1]}")
        run = self._open(run_id)
        lock = run.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(f"run {run_id} is in use (remove {lock} if no process owns it)") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            return self._drive(run, halt_after)
        finally:
            lock.unlink(missing_ok=True)

    def _drive(self, run: _Run, halt_after: str | None) -> VlogManifest:
        self._verify(run)
        spec = self._read_doc(run, "theme.json", ThemeSpec)
        if run.state.stage == "done":
            return self._read_doc(run, "manifest.json", VlogManifest)
        providers = self.provider_factory(run.store, spec.seed)
        self.last_providers = providers
        stages = {
            "stylize": self._stage_stylize,
            "plan": self._stage_plan,
            "keyframes": self._stage_keyframes,
            "videos": self._stage_videos,
            "audio": self._stage_audio,
            "assemble": self._stage_assemble,
        }
        while run.state.stage != "done":
            stage = run.state.stage
            log.info("run %s: stage %s", run.run_id, stage)
            try:
                artifacts = stages[stage](run, spec, providers)
            except Exception as exc:
                run.state = domain.replace(run.state, updated_at=_now(), last_error=f"{stage}: {exc}")
                self._save_state(run)
                raise
            self._complete(run, stage, artifacts)
            if halt_after == stage:
                raise RunInterrupted(f"halted after {stage}")
        manifest = self._read_doc(run, "manifest.json", VlogManifest)
        if self.config.pipeline.muxer:
            self._mux(run, manifest)
        return manifest

    def _mux(self, run: _Run, manifest: VlogManifest) -> int:
        argv = [self.config.pipeline.muxer, *manifest.mux_command[1:]]
        try:
            proc = subprocess.run(argv, cwd=run.root, capture_output=True, text=True)
            status, tail = proc.returncode, proc.stderr[-2000:]
        except OSError as exc:
            status, tail = 127, str(exc)
        record = {"argv": argv, "exit_status": status, "stderr_tail": tail}
        atomic_write(run.root / "mux_status.json", (json.dumps(record, indent=2) + "\n").encode())
        if status != 0:
            log.warning("muxer exited with status %d", status)
        return status


def _asset_refs(data: Any) -> list[AssetRef]:
    """Every AssetRef-shaped object inside a plain-data document."""
    found: list[AssetRef] = []

    def walk(x: Any) -> None:
        if isinstance(x, dict):
            if {"content_hash", "kind", "uri"} <= set(x):
                body = {k: v for k, v in x.items() if k not in ("schema_version", "type")}
                found.append(domain.from_data(AssetRef, body))
                return
            for v in x.values():
                walk(v)
        elif isinstance(x, list):
            for v in x:
                walk(v)

    walk(data)
    return found


def manifest_digest(manifest: VlogManifest) -> str:
    return hashlib.sha256(domain.dumps(manifest).encode()).hexdigest()
