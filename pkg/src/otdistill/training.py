"""Three training stages and the optimizer.

1. :func:`train_teacher` fits both backbones and the fusion head on the full
   multimodal input, then fits the T-Net (prevalent -> privileged features).
2. :func:`align_teachers` trains one modality adapter (plus a small linear
   head) per backbone against the detached joint representation.
3. :func:`train_student` trains the prevalent-only student with teacher
   selection, OT over anchor-reduced similarity rows, and the centroid term.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import losses
from . import tensor as T
from .errors import ConfigError, ContractError, NumericalError, TrainingDivergedError
from .losses import LossWeights, TaskKind
from .metrics import compute_metrics
from .models import FusionHead, Mlp, ModalityAdapter, Module, TNet
from .ot import ot_loss
from .similarity import cosine_similarity_matrix, reduce_to_anchors, select_anchors
from .synthdata import Dataset, rng_stream
from .teacherpool import JOINT, TeacherOutputs, TeacherPool, select_teacher_with_losses
from .tensor import Node

log = logging.getLogger(__name__)

METHODS = ("none", "cosine", "mse", "kl", "pkdot-single", "mt-pkdot")
DIRECTIONS = ("SEW", "WES")
METRIC_COLUMNS = ("epoch", "split", "task_loss", "ot_loss", "cen_loss", "total", "metric")


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 128
    anchors: int = 30
    teacher_epochs: int = 100
    align_epochs: int = 50
    student_epochs: int = 100
    patience: int = 15
    teacher_lr: float = 1e-3
    tnet_lr: float = 1e-3
    align_lr: float = 1e-3
    student_lr: float = 1e-3
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    epsilon: float = 0.05
    sinkhorn_iters: int = 200
    sinkhorn_tol: float = 1e-6
    direction: str = "SEW"
    method: str = "mt-pkdot"
    fusion: str = "concat"
    hidden_dim: int = 64
    feature_dim: int = 32
    joint_dim: int = 64
    adapter_dim: int = 32
    tnet_hidden: int = 64

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not 1 <= self.anchors <= self.batch_size:
            raise ConfigError(f"anchors k={self.anchors} must be in [1, batch_size={self.batch_size}]")
        for name in ("teacher_lr", "tnet_lr", "align_lr", "student_lr", "epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("teacher_epochs", "align_epochs", "student_epochs", "patience", "sinkhorn_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        if self.fusion not in ("concat", "gated"):
            raise ConfigError("fusion must be 'concat' or 'gated'")
        try:
            LossWeights(self.alpha, self.beta, self.gamma)
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**self.to_dict(), **changes})

    @property
    def prevalent(self) -> str:
        """Modality the student keeps. SEW: the privileged modality (B) is
        the stronger one; WES: the student keeps B and A is privileged."""
        return "a" if self.direction == "SEW" else "b"

    @property
    def privileged(self) -> str:
        return "b" if self.prevalent == "a" else "a"

    def loss_weights(self) -> LossWeights:
        """Weights actually applied for ``method``."""
        if self.method == "none":
            return LossWeights(self.alpha, 0.0, 0.0) if self.alpha else LossWeights(1.0, 0.0, 0.0)
        if self.method == "mt-pkdot":
            return LossWeights(self.alpha, self.beta, self.gamma)
        # pointwise baselines and single-teacher PKDOT have no centroid term
        return LossWeights(self.alpha, self.beta, 0.0) if (self.alpha or self.beta) else LossWeights(1.0, 0.0, 0.0)

    def hash(self) -> str:
        return _digest(self.to_dict())

    def model_hash(self, data: Dataset) -> str:
        """Identity of the trained teacher stack: architecture, seed, data."""
        keys = ("seed", "direction", "fusion", "hidden_dim", "feature_dim", "joint_dim",
                "adapter_dim", "tnet_hidden")
        return _digest({"config": {k: getattr(self, k) for k in keys}, "data": data.spec.to_dict()})


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def task_kind(data: Dataset) -> TaskKind:
    if data.is_classification:
        return TaskKind("classification", data.spec.num_classes)
    return TaskKind("regression", 2)


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(params: Sequence[Node], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              names: Sequence[str] | None = None) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``."""
    if not lr > 0:
        raise ContractError(f"learning rate must be > 0, got {lr}")
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} vs parameter {p.shape}")
        if not np.isfinite(g).all():
            label = names[i] if names else (p.name or str(i))
            raise TrainingDivergedError(f"non-finite gradient for parameter {label}")
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = ADAM_BETA1 * state.m.get(i, 0.0) + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v.get(i, 0.0) + (1.0 - ADAM_BETA2) * g * g
        state.m[i], state.v[i] = m, v
        new = p.value - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new.flags.writeable = False
        p.value = new
    return state


class Adam:
    """Stateful wrapper; ``params`` is a list of nodes or (name, node) pairs."""

    def __init__(self, params, lr: float):
        params = list(params)
        if params and isinstance(params[0], tuple):
            self.names = [n for n, _ in params]
            self.params = [p for _, p in params]
        else:
            self.names = None
            self.params = params
        self.lr = lr
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.names)
        for p in self.params:
            p.zero_grad()


# --- networks ------------------------------------------------------------------

class Teacher(Module):
    """Two modality backbones + fusion head; the T-Net rides along but is
    hashed and checkpointed separately."""

    def __init__(self, config: TrainConfig, dim_a: int, dim_b: int, out_dim: int, rng):
        super().__init__()
        h, f = config.hidden_dim, config.feature_dim
        self.children["backbone_a"] = Mlp([dim_a, h, f], "tanh", True, rng)
        self.children["backbone_b"] = Mlp([dim_b, h, f], "tanh", True, rng)
        self.children["fusion"] = FusionHead([f, f], config.joint_dim, out_dim, config.fusion, rng)
        self.tnet = TNet(f, config.tnet_hidden, f, rng)

    @property
    def backbones(self) -> dict[str, Mlp]:
        return {"a": self.children["backbone_a"], "b": self.children["backbone_b"]}

    @property
    def fusion(self) -> FusionHead:
        return self.children["fusion"]

    def forward(self, raw_a, raw_b) -> tuple[Node, Node]:
        feats = [self.backbones["a"](raw_a), self.backbones["b"](raw_b)]
        joint = self.fusion.joint(feats)
        return joint, self.fusion.predictor(joint)


class Student(Module):
    """Prevalent backbone + fusion head fed with T-Net-hallucinated features
    in place of the privileged modality."""

    def __init__(self, config: TrainConfig, dim_prev: int, out_dim: int, rng):
        super().__init__()
        h, f = config.hidden_dim, config.feature_dim
        self.prevalent = config.prevalent
        self.children["backbone"] = Mlp([dim_prev, h, f], "tanh", True, rng)
        self.children["fusion"] = FusionHead([f, f], config.joint_dim, out_dim, config.fusion, rng)

    @property
    def fusion(self) -> FusionHead:
        return self.children["fusion"]

    def forward(self, raw_prev, hallucinated) -> tuple[Node, Node]:
        own = self.children["backbone"](raw_prev)
        feats = [own, T.constant(hallucinated)] if self.prevalent == "a" else [T.constant(hallucinated), own]
        joint = self.fusion.joint(feats)
        return joint, self.fusion.predictor(joint)


def _raw(data: Dataset, modality: str) -> np.ndarray:
    return data.raw_a if modality == "a" else data.raw_b


def hallucinated_features(teacher: Teacher, data: Dataset, config: TrainConfig) -> np.ndarray:
    """Frozen T-Net output for every sample, from the frozen prevalent backbone."""
    prev = teacher.backbones[config.prevalent](_raw(data, config.prevalent))
    return teacher.tnet(prev).value


# --- shared loop ---------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled full batches; the incomplete tail is dropped."""
    perm = rng.permutation(n)
    for i in range(n // batch_size):
        yield perm[i * batch_size:(i + 1) * batch_size]


def _diverged(stage: str, epoch: int, lr: float, exc: Exception) -> TrainingDivergedError:
    return TrainingDivergedError(f"{stage} diverged at epoch {epoch} (lr={lr}): {exc}")


def _fit(stage: str, modules: Sequence[Module], batch_loss: Callable, val_loss: Callable,
         n_train: int, batch_size: int, epochs: int, patience: int, lr: float,
         rng: np.random.Generator) -> list[dict]:
    """Minimize ``batch_loss(idx)``; keep the parameters with the lowest
    ``val_loss()`` and stop after ``patience`` epochs without improvement."""
    if n_train < batch_size:
        raise ConfigError(f"{stage}: {n_train} training samples < batch size {batch_size}")
    opt = Adam([(f"{stage}.{n}", p) for m in modules for n, p in m.named_parameters()], lr)
    best = val_loss()
    best_state = [m.state_dict() for m in modules]
    history = [{"epoch": 0, "train_loss": float("nan"), "val_loss": best}]
    stale = 0
    for epoch in range(1, epochs + 1):
        total = count = 0
        try:
            for idx in _batches(n_train, batch_size, rng):
                loss = batch_loss(idx)
                T.backward(loss)
                opt.step()
                total += loss.item()
                count += 1
            current = val_loss()
        except NumericalError as exc:
            raise _diverged(stage, epoch, lr, exc) from exc
        if not math.isfinite(current):
            raise _diverged(stage, epoch, lr, NumericalError("validation loss is not finite"))
        history.append({"epoch": epoch, "train_loss": total / count, "val_loss": current})
        if current < best:
            best, stale = current, 0
            best_state = [m.state_dict() for m in modules]
        else:
            stale += 1
            if stale >= patience:
                break
    for m, state in zip(modules, best_state):
        m.load_state_dict(state)
    log.info("%s: best val loss %.5f after %d epochs", stage, best, len(history) - 1)
    return history


# --- stage 1 ---------------------------------------------------------------------

def train_teacher(config: TrainConfig, data: Dataset) -> Teacher:
    """Fit the multimodal teacher (min val task loss kept), then the T-Net;
    everything is frozen on return."""
    kind = task_kind(data)
    rng_init = rng_stream(config.seed, "init/teacher")
    teacher = Teacher(config, data.raw_a.shape[1], data.raw_b.shape[1], data.n_outputs, rng_init)
    tr, va = data.train, data.val
    targets = data.targets

    def batch_loss(idx):
        rows = tr[idx]
        _, pred = teacher.forward(data.raw_a[rows], data.raw_b[rows])
        return losses.task_loss(pred, targets[rows], kind)

    def val_loss():
        _, pred = teacher.forward(data.raw_a[va], data.raw_b[va])
        return losses.task_loss(pred, targets[va], kind).item()

    teacher.history = _fit("teacher", [teacher], batch_loss, val_loss, tr.size, config.batch_size,
                           config.teacher_epochs, config.patience, config.teacher_lr,
                           rng_stream(config.seed, "shuffle/teacher"))
    teacher.freeze()

    src = teacher.backbones[config.prevalent]
    dst = teacher.backbones[config.privileged]
    x_src = src(_raw(data, config.prevalent)).value
    y_dst = dst(_raw(data, config.privileged)).value
    tnet = teacher.tnet

    def tnet_loss(idx):
        rows = tr[idx]
        return T.mean(T.square(T.sub(tnet(x_src[rows]), Node(y_dst[rows]))))

    def tnet_val():
        return T.mean(T.square(T.sub(tnet(x_src[va]), Node(y_dst[va])))).item()

    tnet.history = _fit("tnet", [tnet], tnet_loss, tnet_val, tr.size, config.batch_size,
                        config.teacher_epochs, config.patience, config.tnet_lr,
                        rng_stream(config.seed, "shuffle/tnet"))
    tnet.freeze()
    return teacher


# --- stage 2 ---------------------------------------------------------------------

def _mean_cosine(a: np.ndarray, b: np.ndarray) -> float:
    num = (a * b).sum(axis=1)
    return float((num / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))).mean())


def align_teachers(teacher: Teacher, config: TrainConfig, data: Dataset,
                   backbones: Sequence[str] = ("a", "b")) -> TeacherPool:
    """Train one adapter per backbone to reproduce the detached joint
    representation (cosine loss), each with a small linear task head fitted
    on its detached output. Returns the frozen pool."""
    if not teacher.frozen:
        raise ContractError("teacher must be frozen before alignment")
    kind = task_kind(data)
    rng_init = rng_stream(config.seed, "init/adapters")
    adapters = {n: ModalityAdapter(config.feature_dim, config.adapter_dim, config.joint_dim, rng_init)
                for n in backbones}
    heads = {n: Mlp([config.joint_dim, data.n_outputs], "tanh", False, rng_init) for n in backbones}
    pool = TeacherPool(teacher, adapters, heads, kind)
    if not backbones:
        return pool.freeze()

    feats = {n: teacher.backbones[n](_raw(data, n)).value for n in backbones}
    joint = teacher.fusion.joint([teacher.backbones["a"](data.raw_a), teacher.backbones["b"](data.raw_b)]).value
    tr, va = data.train, data.val
    targets = data.targets

    def stage_loss(rows):
        outs = [adapters[n](feats[n][rows]) for n in backbones]
        total = losses.alignment_loss(outs, joint[rows])
        for n, out in zip(backbones, outs):
            total = T.add(total, losses.task_loss(heads[n](Node(out.value)), targets[rows], kind))
        return total

    def align_only(rows):
        return losses.alignment_loss([adapters[n](feats[n][rows]) for n in backbones], joint[rows]).item()

    before = {n: _mean_cosine(adapters[n](feats[n][tr]).value, joint[tr]) for n in backbones}
    initial = align_only(tr)
    modules = [m for n in backbones for m in (adapters[n], heads[n])]
    history = _fit("align", modules, lambda idx: stage_loss(tr[idx]), lambda: stage_loss(va).item(),
                   tr.size, config.batch_size, config.align_epochs, config.patience, config.align_lr,
                   rng_stream(config.seed, "shuffle/align"))
    after = {n: _mean_cosine(adapters[n](feats[n][tr]).value, joint[tr]) for n in backbones}
    pool.alignment_report = {"cosine_before": before, "cosine_after": after,
                             "align_loss_initial": initial, "align_loss_final": align_only(tr),
                             "history": history}
    return pool.freeze()


# --- stage 3 ---------------------------------------------------------------------

@dataclass
class RunRecord:
    method: str
    config: dict
    config_hash: str
    rows: list = field(default_factory=list)
    selection_counts: dict = field(default_factory=dict)
    selection_percent: dict = field(default_factory=dict)
    best_epoch: int = 0
    best_val_metric: float = float("nan")
    test_metric: float = float("nan")
    test_report: dict = field(default_factory=dict)
    n_batches: int = 0
    sinkhorn_unconverged: int = 0
    student_hash: str = ""
    wall_clock_s: float = 0.0
    # per batch: (epoch, batch, teacher, selected task loss, joint task loss)
    selection_log: list = field(default_factory=list)

    def to_dict(self, include_log: bool = False) -> dict:
        d = asdict(self)
        if not include_log:
            d.pop("selection_log")
        return d

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "run.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(outdir / "metrics.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(row[k]) for k in METRIC_COLUMNS})
        if self.selection_log:
            with open(outdir / "selection.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", "batch", "teacher", "selected_loss", "joint_loss"])
                for entry in self.selection_log:
                    writer.writerow([_fmt(x) for x in entry])


def _fmt(x):
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return x


def evaluate_student(student: Student, data: Dataset, split: str, hallucinated: np.ndarray,
                     config: TrainConfig) -> tuple[dict, float]:
    """(metric report, task loss) on a full split."""
    kind = task_kind(data)
    idx = data.indices(split)
    _, pred = student.forward(_raw(data, config.prevalent)[idx], hallucinated[idx])
    report = compute_metrics(pred.value, data.targets[idx], kind.kind)
    return report, losses.task_loss(pred, data.targets[idx], kind).item()


def _zero() -> Node:
    return Node(np.zeros((1, 1)))


def train_student(pool: TeacherPool, config: TrainConfig, data: Dataset,
                  sim_dump_dir=None, ot_dump_dir=None) -> tuple[Student, RunRecord]:
    """Train the prevalent-only student with ``config.method``.

    Per batch (``mt-pkdot``): select the lowest-task-loss teacher, build both
    cosine-similarity matrices, choose anchors on the teacher's, reduce both,
    then minimize alpha*task + beta*OT + gamma*centroid. Returns the student
    with the best validation metric and its :class:`RunRecord`.
    """
    started = time.perf_counter()
    teacher = pool.teacher
    if not teacher.frozen or not teacher.tnet.frozen:
        raise ContractError("teacher and T-Net must be frozen before student training")
    if config.method in ("pkdot-single", "mt-pkdot", "cosine", "mse") and teacher.fusion.joint_dim != config.joint_dim:
        raise ConfigError(f"teacher joint dim {teacher.fusion.joint_dim} != student joint dim {config.joint_dim}")
    kind = task_kind(data)
    weights = config.loss_weights()
    method = config.method
    distill_structure = method in ("pkdot-single", "mt-pkdot")
    pool.reset_counts()

    halluc = hallucinated_features(teacher, data, config)
    raw_prev = _raw(data, config.prevalent)
    tr = data.train
    targets = data.targets
    teacher_out: TeacherOutputs | None = None
    if method != "none":
        teacher_out = pool.evaluate(data.raw_a[tr], data.raw_b[tr])

    student = Student(config, raw_prev.shape[1], data.n_outputs, rng_stream(config.seed, "init/student"))
    opt = Adam([(f"student.{n}", p) for n, p in student.named_parameters()], config.student_lr)
    shuffle = rng_stream(config.seed, "shuffle/student")
    if tr.size < config.batch_size:
        raise ConfigError(f"{tr.size} training samples < batch size {config.batch_size}")

    record = RunRecord(method, config.to_dict(), config.hash())
    probe = data.val[:config.batch_size]
    if sim_dump_dir is not None:
        sim_dump_dir = Path(sim_dump_dir)
        sim_dump_dir.mkdir(parents=True, exist_ok=True)
        t_joint, _ = teacher.forward(data.raw_a[probe], data.raw_b[probe])
        T.save_csv(sim_dump_dir / "sim_teacher.csv", cosine_similarity_matrix(t_joint).array())
    if ot_dump_dir is not None:
        ot_dump_dir = Path(ot_dump_dir)
        ot_dump_dir.mkdir(parents=True, exist_ok=True)

    def dump_sim(epoch):
        if sim_dump_dir is not None:
            joint, _ = student.forward(raw_prev[probe], halluc[probe])
            T.save_csv(sim_dump_dir / f"sim_epoch_{epoch}.csv", cosine_similarity_matrix(joint).array())

    val_report, val_task = evaluate_student(student, data, "val", halluc, config)
    best_metric, best_state, best_epoch, stale = val_report["metric"], student.state_dict(), 0, 0
    record.rows.append(_row(0, "val", val_task, float("nan"), float("nan"), val_task, val_report["metric"]))
    dump_sim(0)

    for epoch in range(1, config.student_epochs + 1):
        sums = np.zeros(4)
        count = 0
        try:
            for b, idx in enumerate(_batches(tr.size, config.batch_size, shuffle)):
                rows = tr[idx]
                joint, pred = student.forward(raw_prev[rows], halluc[rows])
                task = losses.task_loss(pred, targets[rows], kind)
                distill, cen = _zero(), _zero()
                if method in ("pkdot-single", "mt-pkdot"):
                    mode = "joint" if method == "pkdot-single" else "mt"
                    t_feats, t_name, t_losses = select_teacher_with_losses(
                        pool, teacher_out.take(idx), targets[rows], mode)
                    record.selection_log.append((epoch, b, t_name, t_losses[pool.names.index(t_name)], t_losses[-1]))
                    s_teacher = cosine_similarity_matrix(t_feats, source="teacher")
                    anchors = select_anchors(s_teacher, config.anchors)
                    log.debug("epoch %d batch %d teacher %s anchors %s", epoch, b, t_name, anchors.tolist())
                    s_student = cosine_similarity_matrix(joint)
                    distill, plan, cost = ot_loss(reduce_to_anchors(s_teacher, anchors),
                                                  reduce_to_anchors(s_student, anchors),
                                                  config.epsilon, config.sinkhorn_iters, config.sinkhorn_tol,
                                                  return_plan=True)
                    record.sinkhorn_unconverged += not plan.converged
                    if ot_dump_dir is not None and b == 0:
                        T.save_csv(ot_dump_dir / f"plan_epoch_{epoch}.csv", plan.plan)
                        T.save_csv(ot_dump_dir / f"cost_epoch_{epoch}.csv", cost.array())
                    cen = losses.centroid_loss(t_feats, joint)
                elif method in ("cosine", "mse"):
                    distill = losses.pointwise_kd_loss(teacher_out.features[JOINT][idx], joint, method)
                elif method == "kl":
                    t_pred = teacher_out.predictions[JOINT][idx]
                    kd_kind = "kl" if kind.kind == "classification" else "mse"
                    distill = losses.pointwise_kd_loss(t_pred, pred, kd_kind)
                total = losses.student_loss(task, distill, cen, weights)
                T.backward(total)
                opt.step()
                sums += (task.item(), distill.item(), cen.item(), total.item())
                count += 1
            val_report, val_task = evaluate_student(student, data, "val", halluc, config)
        except NumericalError as exc:
            raise _diverged(f"student ({method})", epoch, config.student_lr, exc) from exc
        record.n_batches += count
        mean = sums / count
        train_metric = evaluate_student(student, data, "train", halluc, config)[0]["metric"]
        record.rows.append(_row(epoch, "train", *mean, train_metric))
        record.rows.append(_row(epoch, "val", val_task, float("nan"), float("nan"), val_task, val_report["metric"]))
        dump_sim(epoch)
        if val_report["metric"] > best_metric:
            best_metric, best_state, best_epoch, stale = val_report["metric"], student.state_dict(), epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    student.load_state_dict(best_state)
    student.freeze()
    test_report, _ = evaluate_student(student, data, "test", halluc, config)
    record.best_epoch = best_epoch
    record.best_val_metric = float(best_metric)
    record.test_metric = float(test_report["metric"])
    record.test_report = test_report
    record.selection_counts = dict(pool.selection_counts)
    record.selection_percent = pool.histogram()
    record.student_hash = student.param_hash()
    record.wall_clock_s = time.perf_counter() - started
    return student, record


def _row(epoch, split, task, ot, cen, total, metric) -> dict:
    return {"epoch": epoch, "split": split, "task_loss": float(task), "ot_loss": float(ot),
            "cen_loss": float(cen), "total": float(total), "metric": float(metric)}


def teacher_test_metric(teacher: Teacher, data: Dataset) -> float:
    """Multimodal upper bound on the test split."""
    idx = data.test
    _, pred = teacher.forward(data.raw_a[idx], data.raw_b[idx])
    return compute_metrics(pred.value, data.targets[idx], task_kind(data).kind)["metric"]
