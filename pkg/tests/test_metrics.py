import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdistill import tensor as T
from otdistill.errors import ContractError
from otdistill.losses import TaskKind, task_loss
from otdistill.metrics import compute_metrics

from helpers import scalar_ccc


def test_perfect_predictions():
    y = np.array([[0], [1], [1], [0]])
    logits = np.eye(2)[y.ravel()]
    assert compute_metrics(logits, y, "classification")["metric"] == 1.0
    r = np.random.default_rng(0).normal(size=(10, 2))
    assert compute_metrics(r, r, "regression")["metric"] == pytest.approx(1.0, abs=1e-15)


def test_constant_wrong_class():
    y = np.zeros((5, 1))
    logits = np.tile([[0.0, 1.0]], (5, 1))
    assert compute_metrics(logits, y, "classification")["metric"] == 0.0


def test_random_accuracy_and_ccc_oracles():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(200, 3))
    y = rng.integers(0, 3, size=(200, 1))
    count = sum(1 for i in range(200) if max(range(3), key=lambda c: logits[i, c]) == y[i, 0])
    rep = compute_metrics(logits, y, "classification")
    assert rep["accuracy"] == count / 200 and rep["correct"] == count
    p, t = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
    rep = compute_metrics(p, t, "regression")
    for j in range(2):
        assert abs(rep["ccc"][j] - scalar_ccc(p[:, j].tolist(), t[:, j].tolist())) < 1e-10
    assert rep["mean_ccc"] == rep["metric"]


def test_empty_input():
    with pytest.raises(ContractError):
        compute_metrics(np.zeros((0, 2)), np.zeros((0, 1)), "classification")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_metric_loss_duality(seed, n):
    rng = np.random.default_rng(seed)
    p, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    metric = compute_metrics(p, y, "regression")["metric"]
    loss = task_loss(T.Node(p), y, TaskKind("regression")).item()
    assert abs(metric + loss - 1.0) < 1e-12
