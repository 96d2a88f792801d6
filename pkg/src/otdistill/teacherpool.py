"""Frozen multi-teacher pool and per-batch teacher selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import losses
from .errors import NumericalError
from .losses import TaskKind
from .models import Mlp, ModalityAdapter, Module, state_hash
from .tensor import Node

log = logging.getLogger(__name__)

JOINT = "joint"


@dataclass
class TeacherOutputs:
    """Features (b x m) and predictions per teacher, joint last."""

    features: dict[str, np.ndarray]
    predictions: dict[str, np.ndarray]

    def take(self, idx) -> "TeacherOutputs":
        return TeacherOutputs({k: v[idx] for k, v in self.features.items()},
                              {k: v[idx] for k, v in self.predictions.items()})


def argmin_teacher(task_losses: Sequence[float], names: Sequence[str]) -> int:
    """Index of the lowest finite loss. Ties go to the joint teacher, then to
    the lower index. Non-finite losses are skipped."""
    finite = [(i, l) for i, l in enumerate(task_losses) if math.isfinite(l)]
    for i, l in enumerate(task_losses):
        if not math.isfinite(l):
            log.warning("teacher %s has non-finite task loss; excluded for this batch", names[i])
    if not finite:
        raise NumericalError("every teacher produced a non-finite task loss")
    best = min(l for _, l in finite)
    winners = [i for i, l in finite if l == best]
    for i in winners:
        if names[i] == JOINT:
            return i
    return winners[0]


@dataclass
class TeacherPool:
    """Aligned backbone teachers plus the joint teacher (always last).

    ``teacher`` must expose ``backbones`` (name -> Mlp) and ``fusion``;
    ``adapters``/``heads`` are keyed by backbone name.
    """

    teacher: object
    adapters: dict[str, ModalityAdapter]
    heads: dict[str, Mlp]
    task: TaskKind
    selection_counts: dict[str, int] = field(default_factory=dict)
    alignment_report: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in self.names:
            self.selection_counts.setdefault(name, 0)

    @property
    def names(self) -> list[str]:
        return list(self.adapters) + [JOINT]

    def modules(self) -> dict[str, Module]:
        out: dict[str, Module] = {}
        for name, a in self.adapters.items():
            out[f"adapter_{name}"] = a
            out[f"head_{name}"] = self.heads[name]
        return out

    def freeze(self) -> "TeacherPool":
        for m in self.modules().values():
            m.freeze()
        return self

    def param_hash(self) -> str:
        """Hash over the teacher (when it is a Module), adapters and heads."""
        state = {}
        if isinstance(self.teacher, Module):
            for pname, v in self.teacher.state_dict().items():
                state[f"teacher.{pname}"] = v
        for mname, m in self.modules().items():
            for pname, v in m.state_dict().items():
                state[f"{mname}.{pname}"] = v
        return state_hash(state)

    def evaluate(self, raw_a, raw_b) -> TeacherOutputs:
        """Run every frozen teacher on raw inputs."""
        t = self.teacher
        feats = {"a": t.backbones["a"](raw_a), "b": t.backbones["b"](raw_b)}
        joint = t.fusion.joint([feats["a"], feats["b"]])
        features, predictions = {}, {}
        for name, adapter in self.adapters.items():
            aligned = adapter(feats[name])
            features[name] = aligned.value
            predictions[name] = self.heads[name](aligned).value
        features[JOINT] = joint.value
        predictions[JOINT] = t.fusion.predictor(joint).value
        return TeacherOutputs(features, predictions)

    def task_losses(self, outputs: TeacherOutputs, targets) -> list[float]:
        return [losses.task_loss(Node(outputs.predictions[n]), targets, self.task).item()
                for n in self.names]

    def histogram(self) -> dict[str, float]:
        total = sum(self.selection_counts.values())
        if total == 0:
            return {n: 0.0 for n in self.names}
        return {n: 100.0 * c / total for n, c in self.selection_counts.items()}

    def reset_counts(self) -> None:
        self.selection_counts = {n: 0 for n in self.names}


def select_teacher(pool: TeacherPool, batch_inputs, targets, mode: str = "mt"):
    """Pick the teacher with the lowest task loss on this batch.

    ``batch_inputs`` is either ``(raw_a, raw_b)`` or precomputed
    :class:`TeacherOutputs` for the batch. With ``mode="joint"`` the joint
    teacher is used unconditionally. Returns ``(features, teacher_name)``.
    """
    features, name, _ = select_teacher_with_losses(pool, batch_inputs, targets, mode)
    return features, name


def select_teacher_with_losses(pool: TeacherPool, batch_inputs, targets, mode: str = "mt"):
    """Like :func:`select_teacher`, also returning every teacher's task loss."""
    outputs = batch_inputs if isinstance(batch_inputs, TeacherOutputs) else pool.evaluate(*batch_inputs)
    names = pool.names
    if mode == "joint":
        task_losses = [float("nan")] * (len(names) - 1) + [
            losses.task_loss(Node(outputs.predictions[JOINT]), targets, pool.task).item()]
        choice = len(names) - 1
    else:
        task_losses = pool.task_losses(outputs, targets)
        choice = argmin_teacher(task_losses, names)
    name = names[choice]
    pool.selection_counts[name] += 1
    return outputs.features[name], name, task_losses
