"""Batch cosine-similarity matrices and anchor selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Node


@dataclass(frozen=True)
class SimilarityMatrix:
    """Cosine similarities between batch samples.

    ``values`` is b x b in full form, or b x k once reduced to the columns in
    ``anchor_indices``.
    """

    values: Node
    anchor_indices: tuple[int, ...] | None = None
    source: str = "student"

    @property
    def is_full(self) -> bool:
        return self.anchor_indices is None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def array(self) -> np.ndarray:
        return self.values.value


def cosine_similarity_matrix(features, source: str = "student") -> SimilarityMatrix:
    """S = (X Xᵀ) / (n nᵀ) where n holds the row norms of X.

    Differentiable w.r.t. ``features`` when it is a trainable node. Raises
    :class:`~otdistill.errors.ZeroRowError` naming the first all-zero row.
    """
    x = T.constant(features)
    if x.shape[0] < 2:
        raise ContractError(f"similarity needs at least 2 samples, got {x.shape[0]}")
    gram = T.matmul(x, T.transpose(x))
    norms = T.rowwise_l2norm(x)
    outer = T.matmul(norms, T.transpose(norms))
    return SimilarityMatrix(T.div(gram, outer), None, source)


def select_anchors(teacher_sim: SimilarityMatrix, k: int) -> np.ndarray:
    """Indices of the k most dissimilar samples.

    A sample's score is the sum of its similarities to every *other* sample;
    the k lowest scores win (ties go to the lower index). The chosen indices
    are returned in increasing index order.
    """
    if not teacher_sim.is_full:
        raise ContractError("anchor selection needs a full b x b similarity matrix")
    s = teacher_sim.array()
    b = s.shape[0]
    if not 1 <= k <= b:
        raise ContractError(f"anchor count k={k} outside [1, {b}]")
    off_diag = np.where(np.eye(b, dtype=bool), 0.0, s)
    scores = off_diag.sum(axis=1)
    # lexsort: last key is primary
    order = np.lexsort((np.arange(b), scores))
    return np.sort(order[:k])


def reduce_to_anchors(sim: SimilarityMatrix, anchor_indices) -> SimilarityMatrix:
    """Keep all rows, only the anchor columns (gradient flows to those columns)."""
    if not sim.is_full:
        raise ContractError("matrix is already reduced")
    idx = np.asarray(anchor_indices, dtype=np.intp)
    b = sim.shape[1]
    if idx.ndim != 1 or idx.size == 0:
        raise ContractError("anchor indices must be a nonempty 1-D sequence")
    if idx.min() < 0 or idx.max() >= b:
        raise ContractError(f"anchor index out of range [0, {b})")
    if np.unique(idx).size != idx.size:
        raise ContractError("duplicate anchor index")
    if np.any(np.diff(idx) <= 0):
        raise ContractError("anchor indices must be strictly increasing")
    try:
        values = T.gather_cols(sim.values, idx)
    except DimensionError as exc:  # pragma: no cover - guarded above
        raise ContractError(str(exc)) from exc
    return SimilarityMatrix(values, tuple(int(i) for i in idx), sim.source)
