import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdistill import _kernels_py
from otdistill import tensor as T
from otdistill.errors import ContractError
from otdistill.ot import cost_matrix, ot_loss, sinkhorn
from otdistill.similarity import SimilarityMatrix

from helpers import brute_force_assignment_cost, central_diff, check_op_gradient, rel_err


def test_cost_identical_rows_zero_diagonal():
    x = np.random.default_rng(0).normal(size=(4, 3))
    c = cost_matrix(x, x).array()
    assert np.all(np.diag(c) == 0.0)
    assert np.all(c >= 0)


def test_cost_three_four_five():
    assert cost_matrix([[0.0, 0.0]], [[3.0, 4.0]]).array().tolist() == [[25.0]]


def test_cost_matches_pairwise_oracle():
    rng = np.random.default_rng(1)
    t, s = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    c = cost_matrix(t, s).array()
    for i in range(5):
        for j in range(5):
            assert abs(c[i, j] - sum((t[i, k] - s[j, k]) ** 2 for k in range(3))) < 1e-12


def test_cost_rejects_mismatch():
    with pytest.raises(ContractError):
        cost_matrix(np.ones((3, 2)), np.ones((3, 3)))
    a = SimilarityMatrix(T.Node(np.ones((3, 2))), (0, 1))
    b = SimilarityMatrix(T.Node(np.ones((3, 2))), (0, 2))
    with pytest.raises(ContractError):
        cost_matrix(a, b)


@pytest.mark.parametrize("seed", range(10))
def test_cost_gradient(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(5, 3))
    assert check_op_gradient(lambda s: cost_matrix(t, s).values, [rng.normal(size=(5, 3))], seed) < 1e-5


def test_zero_cost_gives_uniform_coupling():
    for eps in (0.01, 0.5, 3.0):
        tp = sinkhorn(np.zeros((2, 2)), eps)
        assert np.allclose(tp.plan, 0.25, atol=1e-12)
        assert tp.cost(np.zeros((2, 2))) == 0.0


def test_two_point_assignment():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    tp = sinkhorn(c, 0.01)
    assert np.allclose(tp.plan, [[0.5, 0.0], [0.0, 0.5]], atol=1e-3)
    assert tp.cost(c) < 1e-3


def test_random_costs_near_lp_optimum():
    rng = np.random.default_rng(2)
    c = rng.uniform(size=(4, 4))
    tp = sinkhorn(c, 0.005, max_iters=20000, tol=1e-9)
    assert abs(tp.cost(c) - brute_force_assignment_cost(c)) < 5e-3


def test_epsilon_must_be_positive():
    for eps in (0.0, -1.0):
        with pytest.raises(ContractError):
            sinkhorn(np.zeros((2, 2)), eps)


def test_max_iters_flagged_not_fatal():
    c = np.random.default_rng(3).uniform(size=(6, 6)) * 10
    tp = sinkhorn(c, 0.01, max_iters=2, tol=1e-12)
    assert not tp.converged
    assert tp.iterations_used == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.2, 1.0]))
def test_plan_feasible(n, seed, eps):
    c = np.random.default_rng(seed).uniform(0, 2, size=(n, n))
    # near-degenerate plans converge sublinearly, hence the generous budget
    tp = sinkhorn(c, eps, max_iters=10**6, tol=1e-7)
    assert tp.plan.min() >= 0
    assert tp.converged
    assert tp.marginal_violation < 1e-7
    assert abs(tp.plan.sum() - 1.0) < 1e-8


def test_monotone_in_epsilon():
    rng = np.random.default_rng(4)
    for _ in range(10):
        c = rng.uniform(size=(5, 5))
        costs = [sinkhorn(c, e, max_iters=50000, tol=1e-13).cost(c) for e in (0.02, 0.05, 0.1, 0.5, 2.0)]
        assert all(a <= b + 1e-9 for a, b in zip(costs, costs[1:]))


def test_transpose_symmetry():
    rng = np.random.default_rng(5)
    for _ in range(10):
        c = rng.uniform(size=(5, 5))
        p = sinkhorn(c, 0.1, max_iters=50000, tol=1e-13).plan
        pt = sinkhorn(c.T, 0.1, max_iters=50000, tol=1e-13).plan
        assert np.allclose(pt, p.T, rtol=0, atol=1e-8)


def test_log_domain_stability():
    rng = np.random.default_rng(6)
    c = rng.uniform(0, 1000, size=(10, 10))
    tp = sinkhorn(c, 1e-3, max_iters=500)
    assert np.isfinite(tp.plan).all()
    assert np.isfinite(tp.marginal_violation)


def test_self_transport():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(6, 4))
    eps = 0.05
    s = T.parameter(x)
    loss = ot_loss(x, s, eps)
    assert loss.item() <= eps * np.log(6) + 1e-6
    T.backward(loss)
    assert np.abs(s.grad).max() < 1e-6


def test_single_row_loss_is_squared_distance():
    loss = ot_loss([[0.0, 1.0, 2.0]], [[1.0, 3.0, 2.0]], 0.05)
    assert loss.item() == 5.0


@pytest.mark.parametrize("seed", range(10))
def test_fixed_plan_gradient(seed):
    rng = np.random.default_rng(seed)
    t, s0 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    s = T.parameter(s0)
    loss, tp, _ = ot_loss(t, s, 0.1, return_plan=True)
    T.backward(loss)
    plan = tp.plan
    fd = central_diff(lambda x: (plan * _kernels_py.sq_distances(t, x)).sum(), s0)
    assert rel_err(s.grad, fd) < 1e-5


def test_teacher_side_gets_no_gradient():
    rng = np.random.default_rng(8)
    t = T.parameter(rng.normal(size=(4, 2)))
    s = T.parameter(rng.normal(size=(4, 2)))
    T.backward(ot_loss(t, s, 0.1))
    assert np.array_equal(t.grad, np.zeros((4, 2)))
    assert np.abs(s.grad).max() > 0
