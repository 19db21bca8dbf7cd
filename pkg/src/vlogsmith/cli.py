"""Command-line entry point: ``vlogsmith run|resume|plan|eval|validate``.

Exit codes: 0 ok, 1 validation found violations, 2 configuration or input
error, 3 provider failure, 4 stage failure, 5 unusable checkpoint or locked run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path
from typing import Sequence

from . import domain
from .config import RunConfig, build_providers, load_config
from .evaluation import BenchmarkError, OutputError, load_benchmark, report_document, report_table, run_eval
from .macf import Macf, StageError
from .pipeline import CheckpointCorrupted, Pipeline, RunInterrupted, RunLocked, image_size
from .providers.base import ConfigError, PreconditionError, ProviderError
from .providers.mock import MockChatModel, fenced
from .store import AssetStore
from .templates import TemplateLibrary

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_STAGE = 4
EXIT_CHECKPOINT = 5

log = logging.getLogger("vlogsmith")


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.providers:
        changes["providers"] = args.providers
    if args.max_parallel is not None:
        changes["pipeline"] = domain.replace(cfg.pipeline, max_parallel=args.max_parallel)
    return cfg.with_overrides(**changes) if changes else cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.dry_run:
        return _dry_run(cfg, args.theme)
    for p in (args.reference, args.voice):
        if p is not None and not Path(p).is_file():
            raise PreconditionError(f"input file not found: {p}")
    pipe = Pipeline(cfg, args.out)
    run_id = pipe.new_run(args.theme, args.style, args.reference, voice=args.voice, seed=args.seed,
                          run_id=args.run_id)
    try:
        manifest = pipe.resume(run_id, halt_after=args.halt_after)
    except RunInterrupted as exc:
        print(f"{exc}; continue with: vlogsmith resume {run_id} --out {args.out}", file=sys.stderr)
        print(pipe.run_dir(run_id))
        return EXIT_OK
    print(pipe.run_dir(run_id) / "manifest.json")
    log.info("run %s: %.2f s over %d clips", run_id, manifest.total_duration, len(manifest.clips))
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    pipe = Pipeline(_config(args), args.out)
    pipe.resume(args.run_id)
    print(pipe.run_dir(args.run_id) / "manifest.json")
    return EXIT_OK


def _dry_run(cfg: RunConfig, theme: str) -> int:
    macf = Macf(None, cfg.macf)  # renders only; no provider is constructed
    for tid, text in macf.render_stage_one(theme).items():
        print(f"=== {tid} ===\n{text}\n")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.dry_run:
        return _dry_run(cfg, args.theme)
    if not Path(args.reference).is_file():
        raise PreconditionError(f"input file not found: {args.reference}")
    with tempfile.TemporaryDirectory() as tmp:
        store = AssetStore(tmp)
        data = Path(args.reference).read_bytes()
        w, h = image_size(data)
        ref = store.put(data, "image", width=w, height=h)
        spec = domain.ThemeSpec(args.theme, args.style, ref, None, args.seed)
        providers = build_providers(cfg, store, args.seed)
        pipe = Pipeline(cfg, tmp)
        stylized = pipe.stylize_reference(spec, providers)
        plan = Macf(providers, cfg.macf).run_macf(spec, stylized)
    text = domain.dumps(plan)
    if args.out_file:
        Path(args.out_file).write_text(text)
        print(args.out_file)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def load_judge_script(path: str | Path, seed: int = 0) -> MockChatModel:
    """A scripted judge: ``{"name": ..., "replies": {"judge[<item id>]": reply or [replies]}}``."""
    try:
        doc = json.loads(Path(path).read_text())
        name, replies = doc["name"], doc["replies"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"judge script {path}: {exc}") from None
    as_text = lambda r: r if isinstance(r, str) else fenced(r)
    script = {k: [as_text(r) for r in v] if isinstance(v, list) else as_text(v) for k, v in replies.items()}
    return MockChatModel(seed, script, name=name)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    bench = load_benchmark(args.benchmark)
    out = Path(args.out)
    with tempfile.TemporaryDirectory() as tmp:
        store = AssetStore(tmp)
        providers = build_providers(cfg, store, args.seed)
        if args.judge_script:
            providers.chat_models["judge"] = load_judge_script(args.judge_script, args.seed)
        result = run_eval(bench, args.outputs, providers, store, config=cfg.metrics,
                          max_parallel=cfg.pipeline.max_parallel)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_document(result.report))
    (out / "table.txt").write_text(report_table(result.report, args.system))
    sys.stdout.write(report_table(result.report, args.system))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        doc = domain.loads(Path(args.path).read_text())
    except OSError as exc:
        raise PreconditionError(f"cannot read {args.path}: {exc}") from None
    except domain.SchemaError as exc:
        print(f"{args.path}: {exc}")
        return EXIT_INVALID
    bounds = (args.k_min, args.k_max) if args.k_min is not None and args.k_max is not None else None
    problems = domain.validate(doc, k_bounds=bounds, max_rounds=args.max_rounds)
    if problems:
        for p in problems:
            print(f"{args.path}: {p}")
        return EXIT_INVALID
    print(f"{args.path}: valid {type(doc).__name__}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (YAML or JSON)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--providers", choices=("mock", "http"), help="override the config's provider kind")
    common.add_argument("--max-parallel", type=int, help="bound on concurrently processed indices or items")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="vlogsmith", description="Theme-driven vlog planning, generation and scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    run.add_argument("--theme", required=True)
    run.add_argument("--style", required=True)
    run.add_argument("--reference", required=True, help="reference portrait image")
    run.add_argument("--voice", help="optional voice sample for speech")
    run.add_argument("--out", default="runs", help="directory holding run directories")
    run.add_argument("--run-id")
    run.add_argument("--halt-after", help="stop cleanly after this stage (testing resume)")
    run.add_argument("--dry-run", action="store_true", help="print stage-one prompts and exit")
    run.set_defaults(func=cmd_run)

    res = sub.add_parser("resume", parents=[common], help="continue an interrupted run")
    res.add_argument("run_id")
    res.add_argument("--out", default="runs")
    res.set_defaults(func=cmd_resume)

    plan = sub.add_parser("plan", parents=[common], help="stylize and plan only; prints the plan document")
    plan.add_argument("--theme", required=True)
    plan.add_argument("--style", required=True)
    plan.add_argument("--reference", required=True)
    plan.add_argument("--out", dest="out_file", help="write the plan here instead of stdout")
    plan.add_argument("--dry-run", action="store_true")
    plan.set_defaults(func=cmd_plan)

    ev = sub.add_parser("eval", parents=[common], help="score system outputs against a benchmark")
    ev.add_argument("benchmark", help="benchmark directory or manifest.json")
    ev.add_argument("outputs", help="directory of item_<id> output folders")
    ev.add_argument("--out", default="eval_out")
    ev.add_argument("--judge-script", help="JSON file of scripted judge replies (mock judge)")
    ev.add_argument("--system", default="system", help="row label in the table")
    ev.set_defaults(func=cmd_eval)

    val = sub.add_parser("validate", help="check a document against its invariants")
    val.add_argument("path")
    val.add_argument("--k-min", type=int)
    val.add_argument("--k-max", type=int)
    val.add_argument("--max-rounds", type=int)
    val.add_argument("-v", "--verbose", action="count", default=0)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PreconditionError, BenchmarkError, OutputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (CheckpointCorrupted, RunLocked) as exc:
        print(f"checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
