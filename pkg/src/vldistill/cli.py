"""Command-line pipeline driver.

Subcommands hand artifacts to each other through DCKP files in the output
directory:

    gen-data      -> dataset.dckp (world + training pairs)
    make-teacher  -> teacher.dckp
    distill-image -> image_student.dckp, metrics.jsonl
    distill-text  -> text_student.dckp, metrics.jsonl
    align         -> aligned_text.dckp, metrics.jsonl
    eval          -> eval_<variant>_<language>.json + table on stdout
    ablate        -> ablation.json + table on stdout
    gradcheck     -> gradient suite report on stdout
    report        -> consolidated summary of everything in the output dir

Exit codes: 0 success, 1 validation error (bad config/arguments, missing
input file), 2 runtime failure (divergence, corrupt checkpoint, failed check).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import pipeline, zeroshot
from .config import RunConfig, load_config
from .data import LANGUAGES
from .errors import (CheckpointError, ConfigError, GenerationError,
                     NumericError, TrainingError)
from .gradsuite import TOLERANCE, run_suite
from .metrics import log_metrics

DATASET = "dataset.dckp"
TEACHER = "teacher.dckp"
IMAGE_STUDENT = "image_student.dckp"
TEXT_STUDENT = "text_student.dckp"
ALIGNED_TEXT = "aligned_text.dckp"
METRICS = "metrics.jsonl"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="vldistill", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = ["gen-data", "make-teacher", "distill-image", "distill-text",
                "align", "eval", "ablate", "gradcheck", "report"]
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="flat JSON config file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="artifact directory (default: config out_dir)")
        if name == "eval":
            p.add_argument("--variant", choices=["full", "stage1", "teacher"],
                           default="full")
    return parser


def _load(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        import dataclasses
        cfg = dataclasses.replace(cfg, seed=args.seed)
        cfg.validate()
    out = args.out if args.out is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _require(out: Path, *names: str) -> None:
    for name in names:
        if not (out / name).exists():
            raise ConfigError(f"missing required input {out / name}; "
                              f"run the producing subcommand first")


def _metrics_stream(out: Path):
    return open(out / METRICS, "a", encoding="utf-8")


def _cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    world = pipeline.build_world(cfg)
    pairs = pipeline.build_pairs(cfg, world)
    pipeline.save_dataset(out / DATASET, cfg, world, pairs)
    print(f"wrote {out / DATASET}: {world.n_concepts} concepts, {len(pairs)} pairs")
    return 0


def _cmd_make_teacher(cfg: RunConfig, out: Path) -> int:
    _require(out, DATASET)
    world, _ = pipeline.load_dataset(out / DATASET)
    teacher = pipeline.build_teacher(cfg, world)
    pipeline.save_teacher(out / TEACHER, cfg, teacher)
    print(f"wrote {out / TEACHER}: width {teacher.width}, alignment checks passed")
    return 0


def _log_distill_report(out: Path, cfg: RunConfig, stage: str, report) -> None:
    start = time.perf_counter()
    with _metrics_stream(out) as stream:
        log_metrics(stream, {"stage": stage, "step": 0, "seed": cfg.seed,
                             "wall_ms": 0.0,
                             "heldout_loss": report.initial_heldout_loss})
        for epoch, (train, held) in enumerate(
                zip(report.train_losses, report.heldout_losses), start=1):
            log_metrics(stream, {
                "stage": stage, "step": epoch, "seed": cfg.seed,
                "wall_ms": (time.perf_counter() - start) * 1000.0 + report.wall_ms,
                "train_loss": train, "heldout_loss": held,
            })


def _cmd_distill_image(cfg: RunConfig, out: Path) -> int:
    _require(out, DATASET, TEACHER)
    world, pairs = pipeline.load_dataset(out / DATASET)
    teacher = pipeline.load_teacher(out / TEACHER)
    sets, report = pipeline.distill_image(cfg, world, teacher, pairs)
    pipeline.save_student(out / IMAGE_STUDENT, cfg, "distill-image", sets)
    _log_distill_report(out, cfg, "distill-image", report)
    ratio = report.final_heldout_loss / report.initial_heldout_loss
    print(f"wrote {out / IMAGE_STUDENT}: heldout {report.initial_heldout_loss:.5f} "
          f"-> {report.final_heldout_loss:.5f} (x{ratio:.4f})")
    return 0


def _cmd_distill_text(cfg: RunConfig, out: Path) -> int:
    _require(out, DATASET, TEACHER)
    world, pairs = pipeline.load_dataset(out / DATASET)
    teacher = pipeline.load_teacher(out / TEACHER)
    sets, report = pipeline.distill_text(cfg, world, teacher, pairs)
    pipeline.save_student(out / TEXT_STUDENT, cfg, "distill-text", sets)
    _log_distill_report(out, cfg, "distill-text", report)
    ratio = report.final_heldout_loss / report.initial_heldout_loss
    print(f"wrote {out / TEXT_STUDENT}: heldout {report.initial_heldout_loss:.5f} "
          f"-> {report.final_heldout_loss:.5f} (x{ratio:.4f})")
    return 0


def _cmd_align(cfg: RunConfig, out: Path) -> int:
    _require(out, DATASET, IMAGE_STUDENT, TEXT_STUDENT)
    world, pairs = pipeline.load_dataset(out / DATASET)
    image_tower = pipeline.make_image_tower(cfg, pipeline.load_student(out / IMAGE_STUDENT))
    text_tower = pipeline.make_text_tower(cfg, world.vocab_size,
                                          pipeline.load_student(out / TEXT_STUDENT))
    sets, report = pipeline.align_text(cfg, image_tower, text_tower, pairs)
    pipeline.save_student(out / ALIGNED_TEXT, cfg, "align", sets)
    with _metrics_stream(out) as stream:
        for i, loss in enumerate(report.pass_losses):
            log_metrics(stream, {"stage": "align", "step": i + 1, "seed": cfg.seed,
                                 "wall_ms": report.wall_ms, "pass_loss": loss})
    print(f"wrote {out / ALIGNED_TEXT}: pass losses "
          + " ".join(f"{x:.4f}" for x in report.pass_losses))
    return 0


def _towers_for_variant(cfg: RunConfig, out: Path, variant: str, world):
    if variant == "teacher":
        _require(out, TEACHER)
        teacher = pipeline.load_teacher(out / TEACHER)
        return teacher.image_tower(), teacher.text_tower()
    _require(out, IMAGE_STUDENT)
    image_tower = pipeline.make_image_tower(cfg, pipeline.load_student(out / IMAGE_STUDENT))
    text_file = TEXT_STUDENT if variant == "stage1" else ALIGNED_TEXT
    _require(out, text_file)
    text_tower = pipeline.make_text_tower(cfg, world.vocab_size,
                                          pipeline.load_student(out / text_file))
    return image_tower, text_tower


def _cmd_eval(cfg: RunConfig, out: Path, variant: str) -> int:
    _require(out, DATASET)
    world, _ = pipeline.load_dataset(out / DATASET)
    benchmark = pipeline.build_benchmark(cfg, world)
    image_tower, text_tower = _towers_for_variant(cfg, out, variant, world)
    for lang in LANGUAGES:
        report = zeroshot.evaluate(image_tower, text_tower, benchmark, lang,
                                   variant=variant)
        path = out / f"eval_{variant}_{lang}.json"
        path.write_text(report.to_json() + "\n", encoding="utf-8")
        print(report.format_table())
        print()
    return 0


def _cmd_ablate(cfg: RunConfig, out: Path) -> int:
    _require(out, DATASET, IMAGE_STUDENT, TEXT_STUDENT, ALIGNED_TEXT)
    world, _ = pipeline.load_dataset(out / DATASET)
    benchmark = pipeline.build_benchmark(cfg, world)
    image_tower = pipeline.make_image_tower(cfg, pipeline.load_student(out / IMAGE_STUDENT))
    stage1_text = pipeline.make_text_tower(cfg, world.vocab_size,
                                           pipeline.load_student(out / TEXT_STUDENT))
    full_text = pipeline.make_text_tower(cfg, world.vocab_size,
                                         pipeline.load_student(out / ALIGNED_TEXT))
    report = zeroshot.ablation_report(image_tower, stage1_text, full_text, benchmark)
    (out / "ablation.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    print(report.format_table())
    return 0


def _cmd_gradcheck() -> int:
    results = run_suite()
    ok = True
    for name, err in results:
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name:24s} max relative error {err:.3e}  {status}")
        ok = ok and err < TOLERANCE
    return 0 if ok else 2


def _cmd_report(out: Path) -> int:
    if not out.exists():
        raise ConfigError(f"output directory {out} does not exist")
    print(f"artifacts in {out}:")
    for name in (DATASET, TEACHER, IMAGE_STUDENT, TEXT_STUDENT, ALIGNED_TEXT):
        mark = "present" if (out / name).exists() else "missing"
        print(f"  {name:22s} {mark}")
    metrics_path = out / METRICS
    if metrics_path.exists():
        lines = [json.loads(line) for line in metrics_path.read_text().splitlines()]
        by_stage: dict[str, list[dict]] = {}
        for record in lines:
            by_stage.setdefault(record["stage"], []).append(record)
        print(f"metrics: {len(lines)} records")
        for stage, records in by_stage.items():
            last = records[-1]
            loss_keys = [k for k in ("heldout_loss", "pass_loss", "train_loss")
                         if k in last]
            summary = " ".join(f"{k}={last[k]:.5f}" for k in loss_keys)
            print(f"  {stage:14s} steps={len(records)} last: {summary}")
    for path in sorted(out.glob("eval_*.json")):
        record = json.loads(path.read_text())
        print(f"eval {record['variant']:8s} {record['language']}: "
              f"top1={record['accuracy']:.4f} (n={record['n']})")
    ablation_path = out / "ablation.json"
    if ablation_path.exists():
        deltas = json.loads(ablation_path.read_text())["deltas"]
        print("ablation deltas (full - stage1):",
              " ".join(f"{k}={v:+.4f}" for k, v in deltas.items()))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1

    try:
        if args.command == "gradcheck":
            return _cmd_gradcheck()
        cfg, out = _load(args)
        if args.command == "gen-data":
            return _cmd_gen_data(cfg, out)
        if args.command == "make-teacher":
            return _cmd_make_teacher(cfg, out)
        if args.command == "distill-image":
            return _cmd_distill_image(cfg, out)
        if args.command == "distill-text":
            return _cmd_distill_text(cfg, out)
        if args.command == "align":
            return _cmd_align(cfg, out)
        if args.command == "eval":
            return _cmd_eval(cfg, out, args.variant)
        if args.command == "ablate":
            return _cmd_ablate(cfg, out)
        if args.command == "report":
            return _cmd_report(out)
        raise ConfigError(f"unknown subcommand {args.command!r}")
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingError, GenerationError, CheckpointError, NumericError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def console_main() -> None:
    raise SystemExit(main())
