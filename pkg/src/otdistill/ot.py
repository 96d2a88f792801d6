"""Entropy-regularized optimal transport between local similarity structures.

Rows of the (anchor-reduced) teacher and student similarity matrices are the
points being matched. The cost is squared Euclidean distance, marginals are
uniform, and the plan comes from log-domain Sinkhorn. The loss is the
transport cost under the plan; the plan itself is held fixed when
differentiating.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _backend
from . import tensor as T
from .errors import ContractError, NumericalError
from .similarity import SimilarityMatrix
from .tensor import Node

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.05
DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    epsilon: float
    iterations_used: int
    marginal_violation: float
    converged: bool

    def cost(self, cost) -> float:
        c = cost.values.value if isinstance(cost, CostMatrix) else np.asarray(cost)
        return float((self.plan * c).sum())


@dataclass(frozen=True)
class CostMatrix:
    values: Node

    def array(self) -> np.ndarray:
        return self.values.value


def _rows(x) -> Node:
    return x.values if isinstance(x, SimilarityMatrix) else T.constant(x)


def cost_matrix(teacher_rows, student_rows) -> CostMatrix:
    """values[i, j] = ||teacher_i - student_j||², differentiable in the student."""
    if isinstance(teacher_rows, SimilarityMatrix) and isinstance(student_rows, SimilarityMatrix):
        if teacher_rows.anchor_indices != student_rows.anchor_indices:
            raise ContractError("teacher and student were reduced with different anchors")
    t, s = _rows(teacher_rows), _rows(student_rows)
    if t.shape != s.shape:
        raise ContractError(f"cost_matrix: shape mismatch {t.shape} vs {s.shape}")
    tv = np.ascontiguousarray(t.value)
    sv = np.ascontiguousarray(s.value)
    value = _backend.sq_distances(tv, sv)

    def back(g):
        # d/ds_j sum_ij g_ij |t_i - s_j|^2 = 2 (colsum_j s_j - (gᵀ t)_j)
        return (2.0 * (g.sum(axis=0)[:, None] * sv - g.T @ tv),)

    return CostMatrix(T.custom(value, (s,), back))


def sinkhorn(cost, epsilon: float = DEFAULT_EPSILON, max_iters: int = DEFAULT_MAX_ITERS,
             tol: float = DEFAULT_TOL) -> TransportPlan:
    """Entropic OT plan with uniform marginals, solved in the log domain.

    Stops when the largest marginal deviation drops below ``tol`` or after
    ``max_iters`` sweeps; the latter is reported through ``converged``.
    """
    if not epsilon > 0:
        raise ContractError(f"epsilon must be > 0, got {epsilon}")
    c = cost.array() if isinstance(cost, CostMatrix) else T.as_matrix(cost)
    c = np.ascontiguousarray(c, dtype=np.float64)
    n, m = c.shape
    log_mu = np.full(n, -np.log(n))
    log_nu = np.full(m, -np.log(m))
    f, g, iters, viol = _backend.sinkhorn_log(c, log_mu, log_nu, float(epsilon), int(max_iters), float(tol))
    if not (np.isfinite(f).all() and np.isfinite(g).all() and np.isfinite(viol)):
        raise NumericalError(f"sinkhorn produced non-finite potentials (epsilon={epsilon})")
    plan = np.exp((f[:, None] + g[None, :] - c) / epsilon)
    # report the violation of both marginals for the returned plan
    viol = max(np.abs(plan.sum(axis=1) - 1.0 / n).max(), np.abs(plan.sum(axis=0) - 1.0 / m).max())
    converged = bool(viol < tol)
    if not converged:
        log.debug("sinkhorn stopped at %d iterations, marginal violation %.3g", iters, viol)
    return TransportPlan(plan, float(epsilon), int(iters), float(viol), converged)


def ot_loss(teacher_rows, student_rows, epsilon: float = DEFAULT_EPSILON,
            max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
            return_plan: bool = False):
    """<plan, C> with the plan treated as a constant.

    The entropic term shapes the plan but is not part of the returned value.
    Only the student side carries gradient.
    """
    cost = cost_matrix(teacher_rows, student_rows)
    tp = sinkhorn(cost, epsilon, max_iters, tol)
    loss = T.sum(T.mul(cost.values, Node(tp.plan)))
    if return_plan:
        return loss, tp, cost
    return loss
