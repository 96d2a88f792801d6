"""Experiment orchestration: the baseline ladder, ablation grids and
similarity dumps. Everything here writes plain CSV/JSON under an output
directory; each (seed, method) cell owns its own subdirectory."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import CheckpointError, ConfigError
from .models import Mlp, ModalityAdapter, load_checkpoint, save_checkpoint
from .synthdata import Dataset, rng_stream
from .teacherpool import JOINT, TeacherPool
from .training import (Student, Teacher, TrainConfig, align_teachers, evaluate_student,
                       hallucinated_features, task_kind, teacher_test_metric, train_student,
                       train_teacher)

log = logging.getLogger(__name__)

# (row name, student method); None marks the multimodal teacher
LADDER = (
    ("lower-bound", "none"),
    ("upper-bound", None),
    ("pkd-cosine", "cosine"),
    ("pkd-mse", "mse"),
    ("pkd-kl", "kl"),
    ("pkdot-single", "pkdot-single"),
    ("mt-pkdot", "mt-pkdot"),
)
LADDER_NAMES = tuple(name for name, _ in LADDER)
RESULT_COLUMNS = ("method", "seed", "metric", "test", "best_val", "best_epoch", "joint_selected_pct")
SUMMARY_COLUMNS = ("method", "metric", "mean", "std", "n")
ABLATION_COLUMNS = ("batch_size", "anchors", "centroid", "metric", "mean", "std", "n")


@dataclass
class Stack:
    """Everything trained before the student stage, for one seed."""

    data: Dataset
    config: TrainConfig
    teacher: Teacher
    pool: TeacherPool


def metric_name(data: Dataset) -> str:
    return "accuracy" if data.is_classification else "mean_ccc"


def worker_count(n_tasks: int) -> int:
    env = os.environ.get("OTDISTILL_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ConfigError(f"OTDISTILL_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise ConfigError("OTDISTILL_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def _map(fn, args: Sequence[tuple]) -> list:
    """Run ``fn(*a)`` for every ``a``; in worker processes when allowed.
    Results come back in input order regardless of completion order."""
    workers = worker_count(len(args))
    if workers == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


# --- stacks and checkpoints --------------------------------------------------------

def build_stack(exp: ExperimentConfig, seed: int) -> Stack:
    data = exp.dataset(seed)
    cfg = exp.train_config(seed)
    teacher = train_teacher(cfg, data)
    pool = align_teachers(teacher, cfg, data)
    return Stack(data, cfg, teacher, pool)


def _teacher_shell(cfg: TrainConfig, data: Dataset) -> Teacher:
    return Teacher(cfg, data.raw_a.shape[1], data.raw_b.shape[1], data.n_outputs, rng_stream(0, "shell"))


def save_teacher(directory, teacher: Teacher, cfg: TrainConfig, data: Dataset) -> None:
    save_checkpoint(directory, {"teacher": teacher, "tnet": teacher.tnet}, cfg.model_hash(data),
                    {"history": teacher.history, "tnet_history": teacher.tnet.history})


def load_teacher(directory, cfg: TrainConfig, data: Dataset) -> Teacher:
    teacher = _teacher_shell(cfg, data)
    load_checkpoint(directory, {"teacher": teacher, "tnet": teacher.tnet}, cfg.model_hash(data))
    teacher.freeze()
    teacher.tnet.freeze()
    return teacher


def save_pool(directory, pool: TeacherPool, cfg: TrainConfig, data: Dataset) -> None:
    report = {k: v for k, v in pool.alignment_report.items() if k != "history"}
    save_checkpoint(directory, pool.modules(), cfg.model_hash(data),
                    {"backbones": list(pool.adapters), "alignment": report})


def load_pool(directory, teacher: Teacher, cfg: TrainConfig, data: Dataset) -> TeacherPool:
    manifest_path = Path(directory) / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no pool checkpoint at {directory}")
    extra = json.loads(manifest_path.read_text()).get("extra", {})
    names = extra.get("backbones", ["a", "b"])
    rng = rng_stream(0, "shell")
    adapters = {n: ModalityAdapter(cfg.feature_dim, cfg.adapter_dim, cfg.joint_dim, rng) for n in names}
    heads = {n: Mlp([cfg.joint_dim, data.n_outputs], "tanh", False, rng) for n in names}
    pool = TeacherPool(teacher, adapters, heads, task_kind(data), alignment_report=extra.get("alignment", {}))
    load_checkpoint(directory, pool.modules(), cfg.model_hash(data))
    return pool.freeze()


def save_student(directory, student: Student, cfg: TrainConfig, data: Dataset) -> None:
    save_checkpoint(directory, {"student": student}, cfg.model_hash(data), {"method": cfg.method})


def load_student(directory, cfg: TrainConfig, data: Dataset) -> Student:
    student = Student(cfg, _prevalent_dim(data, cfg), data.n_outputs, rng_stream(0, "shell"))
    load_checkpoint(directory, {"student": student}, cfg.model_hash(data))
    return student.freeze()


def _prevalent_dim(data: Dataset, cfg: TrainConfig) -> int:
    return (data.raw_a if cfg.prevalent == "a" else data.raw_b).shape[1]


def evaluate_checkpoint(directory, student_dir, cfg: TrainConfig, data: Dataset) -> dict:
    """Test-split report of a saved student (teacher checkpoint supplies the T-Net)."""
    teacher = load_teacher(Path(directory) / "teacher", cfg, data)
    student = load_student(student_dir, cfg, data)
    halluc = hallucinated_features(teacher, data, cfg)
    report, _ = evaluate_student(student, data, "test", halluc, cfg)
    return report


# --- ladder ------------------------------------------------------------------------

def _ladder(methods: Iterable[str] | None) -> list[tuple[str, str | None]]:
    wanted = set(methods) if methods is not None else set(LADDER_NAMES)
    unknown = wanted - set(LADDER_NAMES)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}")
    return [(name, m) for name, m in LADDER if name in wanted]


def run_seed(exp: ExperimentConfig, seed: int, outdir, methods: Iterable[str] | None = None) -> list[dict]:
    """Teacher, alignment and every requested ladder row for one seed."""
    outdir = Path(outdir) / f"seed_{seed}"
    stack = build_stack(exp, seed)
    save_teacher(outdir / "teacher", stack.teacher, stack.config, stack.data)
    save_pool(outdir / "pool", stack.pool, stack.config, stack.data)
    mname = metric_name(stack.data)
    rows = []
    for name, method in _ladder(methods):
        if method is None:
            test = teacher_test_metric(stack.teacher, stack.data)
            (outdir / name).mkdir(parents=True, exist_ok=True)
            (outdir / name / "run.json").write_text(json.dumps({"test_metric": test}, indent=2))
            rows.append(_result(name, seed, mname, test, float("nan"), 0, float("nan")))
            continue
        log.info("seed %d: %s", seed, name)
        student, rec = train_student(stack.pool, stack.config.replace(method=method), stack.data)
        rec.write(outdir / name)
        save_student(outdir / name / "student", student, stack.config, stack.data)
        selected = sum(rec.selection_counts.values())
        joint_pct = rec.selection_percent[JOINT] if selected else float("nan")
        rows.append(_result(name, seed, mname, rec.test_metric, rec.best_val_metric, rec.best_epoch, joint_pct))
    return rows


def _result(name, seed, mname, test, best_val, best_epoch, joint_pct) -> dict:
    return {"method": name, "seed": seed, "metric": mname, "test": float(test),
            "best_val": float(best_val), "best_epoch": int(best_epoch),
            "joint_selected_pct": float(joint_pct)}


def summarize(rows: Sequence[dict], key=("method",)) -> list[dict]:
    """Mean and sample standard deviation of the test metric per group,
    groups kept in first-seen order."""
    groups: dict[tuple, list[float]] = {}
    metric_of: dict[tuple, str] = {}
    for r in rows:
        k = tuple(r[c] for c in key)
        groups.setdefault(k, []).append(r["test"])
        metric_of[k] = r["metric"]
    out = []
    for k, vals in groups.items():
        arr = np.array(vals)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out.append({**dict(zip(key, k)), "metric": metric_of[k], "mean": float(arr.mean()),
                    "std": std, "n": int(arr.size)})
    return out


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return x


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])


def compare(exp: ExperimentConfig, seeds: Sequence[int], outdir, methods=None) -> list[dict]:
    """The baseline ladder over seeds. Writes ``results.csv`` (one row per
    method and seed) and ``summary.csv`` (mean/std per method)."""
    outdir = Path(outdir)
    methods = methods if methods is not None else exp.methods
    per_seed = _map(run_seed, [(exp, s, outdir, methods) for s in seeds])
    order = {name: i for i, name in enumerate(LADDER_NAMES)}
    rows = sorted((r for rs in per_seed for r in rs), key=lambda r: (order[r["method"]], r["seed"]))
    write_csv(outdir / "results.csv", RESULT_COLUMNS, rows)
    summary = summarize(rows)
    write_csv(outdir / "summary.csv", SUMMARY_COLUMNS, summary)
    return summary


# --- ablations -----------------------------------------------------------------------

def _ablate_seed(exp: ExperimentConfig, seed: int, outdir) -> list[dict]:
    outdir = Path(outdir) / f"seed_{seed}"
    stack = build_stack(exp, seed)
    mname = metric_name(stack.data)
    base = stack.config.replace(method="mt-pkdot")
    cells = [(b, k, True) for b in exp.ablate.batch_sizes for k in exp.ablate.anchors]
    if exp.ablate.centroid:
        cells.append((base.batch_size, base.anchors, False))
    rows = []
    for b, k, centroid in cells:
        if k > b:
            raise ConfigError(f"ablation cell anchors={k} > batch_size={b}")
        changes = {"batch_size": b, "anchors": k}
        if not centroid:
            changes["gamma"] = 0.0
        _, rec = train_student(stack.pool, base.replace(**changes), stack.data)
        cell = f"b{b}_k{k}" + ("" if centroid else "_nocentroid")
        rec.write(outdir / cell)
        rows.append({"batch_size": b, "anchors": k, "centroid": "on" if centroid else "off",
                     "seed": seed, "metric": mname, "test": rec.test_metric})
    return rows


def ablate(exp: ExperimentConfig, seeds: Sequence[int], outdir) -> list[dict]:
    """Batch-size x anchor grid for MT-PKDOT, plus the centroid on/off pair
    at the base configuration. Writes ``ablation.csv``."""
    outdir = Path(outdir)
    per_seed = _map(_ablate_seed, [(exp, s, outdir) for s in seeds])
    rows = [r for rs in per_seed for r in rs]
    write_csv(outdir / "ablation_results.csv",
              ("batch_size", "anchors", "centroid", "seed", "metric", "test"), rows)
    summary = summarize(rows, key=("batch_size", "anchors", "centroid"))
    write_csv(outdir / "ablation.csv", ABLATION_COLUMNS, summary)
    return summary


def dump_similarities(exp: ExperimentConfig, seed: int, outdir) -> Path:
    """Train one MT-PKDOT student and write the teacher similarity matrix
    plus the student's after every epoch, on a fixed validation batch."""
    outdir = Path(outdir)
    stack = build_stack(exp, seed)
    cfg = stack.config.replace(method="mt-pkdot")
    _, rec = train_student(stack.pool, cfg, stack.data, sim_dump_dir=outdir, ot_dump_dir=outdir / "ot")
    rec.write(outdir)
    return outdir
