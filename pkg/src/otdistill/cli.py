"""Command-line entry point: ``otdistill <subcommand> --config cfg.json --outdir out``.

Stage commands share one output directory::

    out/teacher/   teacher + T-Net checkpoint      (train-teacher)
    out/pool/      adapters + heads checkpoint     (align)
    out/student/   student checkpoint              (train-student)
    out/run.json, out/metrics.csv, out/selection.csv
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ExperimentConfig, load_config
from .errors import OTDistillError
from .training import align_teachers, train_student, train_teacher

log = logging.getLogger("otdistill")


def _seeds(text: str | None, default: int) -> list[int]:
    if not text:
        return [default]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {text!r}")


def _load(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _single_seed(args, exp) -> int:
    seeds = _seeds(args.seeds, exp.seed)
    if len(seeds) != 1:
        raise OTDistillError(f"{args.command} takes a single seed, got {seeds}")
    return seeds[0]


def cmd_gen(args) -> int:
    exp = _load(args)
    if exp.data_dir is not None:
        raise OTDistillError("gen needs a 'data' section, not 'data_dir'")
    seeds = _seeds(args.seeds, exp.data.seed)
    out = Path(args.outdir)
    for s in seeds:
        target = out if len(seeds) == 1 else out / f"seed_{s}"
        exp.dataset(s).save(target)
        log.info("wrote dataset seed %d to %s", s, target)
    return 0


def cmd_train_teacher(args) -> int:
    exp = _load(args)
    seed = _single_seed(args, exp)
    data, cfg = exp.dataset(seed), exp.train_config(seed)
    teacher = train_teacher(cfg, data)
    out = Path(args.outdir)
    harness.save_teacher(out / "teacher", teacher, cfg, data)
    print(json.dumps({"teacher_test_metric": harness.teacher_test_metric(teacher, data)}))
    return 0


def cmd_align(args) -> int:
    exp = _load(args)
    seed = _single_seed(args, exp)
    data, cfg = exp.dataset(seed), exp.train_config(seed)
    out = Path(args.outdir)
    teacher = harness.load_teacher(out / "teacher", cfg, data)
    pool = align_teachers(teacher, cfg, data)
    harness.save_pool(out / "pool", pool, cfg, data)
    report = {k: v for k, v in pool.alignment_report.items() if k != "history"}
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_train_student(args) -> int:
    exp = _load(args)
    seed = _single_seed(args, exp)
    data, cfg = exp.dataset(seed), exp.train_config(seed)
    out = Path(args.outdir)
    teacher = harness.load_teacher(out / "teacher", cfg, data)
    pool = harness.load_pool(out / "pool", teacher, cfg, data)
    student, rec = train_student(pool, cfg, data)
    rec.write(out)
    harness.save_student(out / "student", student, cfg, data)
    print(json.dumps({"method": cfg.method, "test_metric": rec.test_metric,
                      "best_epoch": rec.best_epoch, "selection_percent": rec.selection_percent}))
    return 0


def cmd_eval(args) -> int:
    exp = _load(args)
    seed = _single_seed(args, exp)
    data, cfg = exp.dataset(seed), exp.train_config(seed)
    out = Path(args.outdir)
    report = harness.evaluate_checkpoint(out, out / "student", cfg, data)
    result = {"test_metric": report["metric"], "report": report}
    run_json = out / "run.json"
    if run_json.exists():
        result["stored_test_metric"] = json.loads(run_json.read_text())["test_metric"]
    print(json.dumps(result))
    return 0


def cmd_compare(args) -> int:
    exp = _load(args)
    summary = harness.compare(exp, _seeds(args.seeds, exp.seed), args.outdir)
    for row in summary:
        print(f"{row['method']:<14} {row['metric']:<9} {row['mean']:.4f} ± {row['std']:.4f} (n={row['n']})")
    return 0


def cmd_ablate(args) -> int:
    exp = _load(args)
    summary = harness.ablate(exp, _seeds(args.seeds, exp.seed), args.outdir)
    for row in summary:
        print(f"b={row['batch_size']:<4} k={row['anchors']:<4} centroid={row['centroid']:<3} "
              f"{row['mean']:.4f} ± {row['std']:.4f}")
    return 0


def cmd_dump_sim(args) -> int:
    exp = _load(args)
    seed = _single_seed(args, exp)
    out = harness.dump_similarities(exp, seed, args.outdir)
    print(json.dumps({"outdir": str(out), "files": sorted(p.name for p in out.glob("sim_*.csv"))}))
    return 0


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic dataset directory"),
    "train-teacher": (cmd_train_teacher, "train the multimodal teacher and T-Net"),
    "align": (cmd_align, "train modality adapters against the joint representation"),
    "train-student": (cmd_train_student, "train the prevalent-only student"),
    "eval": (cmd_eval, "test-split metric of a saved student"),
    "compare": (cmd_compare, "run the baseline ladder over seeds"),
    "ablate": (cmd_ablate, "batch-size x anchor grid and centroid on/off"),
    "dump-sim": (cmd_dump_sim, "write per-epoch similarity matrices"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otdistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        p.add_argument("--outdir", required=True, help="output directory")
        p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
        p.add_argument("--quiet", action="store_true", help="only print results and errors")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command][0](args)
    except (OTDistillError, argparse.ArgumentTypeError) as exc:
        print(f"otdistill {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
