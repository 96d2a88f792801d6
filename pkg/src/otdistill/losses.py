"""Training objectives.

All functions return 1x1 :class:`~otdistill.tensor.Node` values. Teacher-side
inputs are always detached: gradients only reach the network being trained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NumericalError
from .tensor import Node

CCC_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ContractError(f"loss weights must be finite and >= 0, got {vals}")
        if not any(vals):
            raise ContractError("at least one loss weight must be nonzero")


@dataclass(frozen=True)
class TaskKind:
    kind: str = "classification"
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ContractError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and self.num_classes < 2:
            raise ContractError("classification needs num_classes >= 2")

    @property
    def is_regression(self) -> bool:
        return self.kind == "regression"


def _detached(x) -> Node:
    return Node(x.value) if isinstance(x, Node) else T.constant(x)


def _rowwise_cosine(a: Node, b: Node) -> Node:
    dots = T.sum(T.mul(a, b), axis=1)
    return T.div(dots, T.mul(T.rowwise_l2norm(a), T.rowwise_l2norm(b)))


def alignment_loss(backbone_features: Sequence[Node], joint) -> Node:
    """Sum over backbones of the batch-mean (1 - cosine(adapted_i, joint))."""
    target = _detached(joint)
    total = Node(np.zeros((1, 1)))
    for i, feats in enumerate(backbone_features):
        feats = T.constant(feats)
        if feats.shape != target.shape:
            raise DimensionError(f"backbone {i}: shape {feats.shape} vs joint {target.shape}")
        total = T.add(total, T.mean(T.sub(1.0, _rowwise_cosine(feats, target))))
    return total


def ccc_loss(predictions: Node, targets) -> Node:
    """1 - CCC per output column, averaged over columns (population moments)."""
    p = T.constant(predictions)
    y = _detached(targets)
    if p.shape != y.shape:
        raise DimensionError(f"ccc: predictions {p.shape} vs targets {y.shape}")
    if p.shape[0] < 2:
        raise ContractError("ccc needs at least 2 samples")
    mp, my = T.mean(p, axis=0), T.mean(y, axis=0)
    dp, dy = T.sub(p, mp), T.sub(y, my)
    var_p = T.mean(T.square(dp), axis=0)
    var_y = T.mean(T.square(dy), axis=0)
    cov = T.mean(T.mul(dp, dy), axis=0)
    denom = T.add(T.add(var_p, var_y), T.square(T.sub(mp, my)))
    # only a fully degenerate column (0/0) gets the stabilizer
    pad = np.where(denom.value == 0.0, CCC_EPS, 0.0)
    if pad.any():
        denom = T.add(denom, Node(pad))
    ccc = T.div(T.scale(cov, 2.0), denom)
    return T.mean(T.sub(1.0, ccc))


def cross_entropy(logits: Node, labels) -> Node:
    """Mean categorical cross-entropy; ``labels`` is b x 1 class indices."""
    z = T.constant(logits)
    lab = np.asarray(labels.value if isinstance(labels, Node) else labels).reshape(-1).astype(np.intp)
    if lab.shape[0] != z.shape[0]:
        raise DimensionError(f"cross_entropy: {z.shape[0]} logits rows vs {lab.shape[0]} labels")
    if lab.min() < 0 or lab.max() >= z.shape[1]:
        raise ContractError("label outside [0, num_classes)")
    onehot = np.zeros(z.shape)
    onehot[np.arange(lab.size), lab] = 1.0
    return T.scale(T.sum(T.mul(T.log_softmax_rows(z), Node(onehot))), -1.0 / lab.size)


def task_loss(predictions: Node, targets, kind: TaskKind) -> Node:
    if kind.is_regression:
        return ccc_loss(predictions, targets)
    return cross_entropy(predictions, targets)


def centroid_loss(teacher, student: Node) -> Node:
    """||mean(teacher rows) - mean(student rows)||²."""
    t = _detached(teacher)
    s = T.constant(student)
    if t.shape != s.shape:
        raise ContractError(f"centroid_loss: shape mismatch {t.shape} vs {s.shape}")
    return T.sum(T.square(T.sub(T.mean(s, axis=0), T.mean(t, axis=0))))


def student_loss(task, ot, cen, w: LossWeights) -> Node:
    """alpha*task + beta*ot + gamma*cen. Terms are scalar nodes or plain floats."""
    terms = []
    for name, term in (("task", task), ("ot", ot), ("centroid", cen)):
        if not isinstance(term, Node):
            if not math.isfinite(float(term)):
                raise NumericalError(f"{name} loss is not finite")
            term = Node([[float(term)]])
        terms.append(term)
        if term.shape != (1, 1):
            raise ContractError(f"{name} loss must be scalar, got {term.shape}")
        if not np.isfinite(term.value).all():
            raise NumericalError(f"{name} loss is not finite")
    task, ot, cen = terms
    return T.add(T.add(T.scale(task, w.alpha), T.scale(ot, w.beta)), T.scale(cen, w.gamma))


def pointwise_kd_loss(teacher, student: Node, kind: str) -> Node:
    """Point-to-point distillation baselines, averaged over the batch.

    ``cosine``: 1 - cosine per sample; ``mse``: mean squared error;
    ``kl``: KL(softmax(teacher) || softmax(student)) per sample.
    """
    t = _detached(teacher)
    s = T.constant(student)
    if t.shape != s.shape:
        raise ContractError(f"pointwise_kd_loss: shape mismatch {t.shape} vs {s.shape}")
    if kind == "cosine":
        return T.mean(T.sub(1.0, _rowwise_cosine(s, t)))
    if kind == "mse":
        return T.mean(T.square(T.sub(s, t)))
    if kind == "kl":
        shifted = t.value - t.value.max(axis=1, keepdims=True)
        log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        p = np.exp(log_p)
        entropy_term = (p * log_p).sum(axis=1, keepdims=True)
        cross = T.sum(T.mul(T.log_softmax_rows(s), Node(p)), axis=1)
        return T.mean(T.sub(Node(entropy_term), cross))
    raise ContractError(f"unknown pointwise KD kind {kind!r}")
