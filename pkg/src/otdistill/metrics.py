"""Evaluation metrics: accuracy for classification, CCC for regression."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .losses import CCC_EPS


def ccc(x: np.ndarray, y: np.ndarray) -> float:
    """Concordance correlation coefficient with population moments."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    var_x, var_y = (dx * dx).mean(), (dy * dy).mean()
    cov = (dx * dy).mean()
    denom = var_x + var_y + (mx - my) ** 2
    if denom == 0.0:
        denom = CCC_EPS
    return float(2.0 * cov / denom)


def compute_metrics(predictions, targets, kind: str) -> dict:
    """``metric`` is accuracy (classification, logits in, argmax taken) or
    the mean CCC over output columns (regression)."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.size == 0 or y.size == 0:
        raise ContractError("cannot score an empty batch")
    if p.ndim == 1:
        p = p[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if p.shape[0] != y.shape[0]:
        raise DimensionError(f"{p.shape[0]} predictions vs {y.shape[0]} targets")
    if kind == "classification":
        labels = y.reshape(-1).astype(np.intp)
        correct = int((p.argmax(axis=1) == labels).sum())
        acc = correct / labels.size
        return {"metric": acc, "accuracy": acc, "correct": correct, "n": int(labels.size)}
    if kind == "regression":
        if p.shape != y.shape:
            raise DimensionError(f"predictions {p.shape} vs targets {y.shape}")
        per_dim = [ccc(p[:, j], y[:, j]) for j in range(p.shape[1])]
        mean = float(np.mean(per_dim))
        return {"metric": mean, "ccc": per_dim, "mean_ccc": mean, "n": int(p.shape[0])}
    raise ContractError(f"unknown task kind {kind!r}")
