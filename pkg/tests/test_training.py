import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from otdistill import tensor as T
from otdistill import training
from otdistill.errors import ConfigError, ContractError, TrainingDivergedError
from otdistill.synthdata import GenSpec, generate
from otdistill.teacherpool import JOINT
from otdistill.training import (METRIC_COLUMNS, Adam, AdamState, TrainConfig, adam_step,
                                align_teachers, hallucinated_features, teacher_test_metric,
                                train_student, train_teacher)

from helpers import least_squares_fit

SMALL = TrainConfig(batch_size=32, anchors=8, teacher_epochs=8, align_epochs=8, student_epochs=3,
                    patience=5, hidden_dim=16, feature_dim=8, joint_dim=12, adapter_dim=6,
                    tnet_hidden=12, teacher_lr=5e-3, tnet_lr=5e-3, align_lr=5e-3, student_lr=5e-3)


def small_data(task="classification", seed=0, n=600, **kw):
    return generate(GenSpec(n_samples=n, dim_a=8, dim_b=6, task=task, seed=seed, **kw))


@pytest.fixture(scope="module")
def stack():
    data = small_data()
    teacher = train_teacher(SMALL, data)
    before = teacher.param_hash()
    pool = align_teachers(teacher, SMALL, data)
    return data, teacher, pool, before


# --- optimizer --------------------------------------------------------------------

def test_adam_zero_gradient_is_no_op():
    p = T.parameter([[1.0, -2.0]])
    adam_step([p], [np.zeros((1, 2))], AdamState(), 0.1)
    assert p.value.tolist() == [[1.0, -2.0]]


def test_adam_first_step_is_lr():
    p = T.parameter([[0.5]])
    adam_step([p], [np.ones((1, 1))], AdamState(), 1e-3)
    assert abs((0.5 - p.value[0, 0]) - 1e-3) < 1e-9


def test_adam_matches_scalar_recurrence():
    # f(x) = (x - 3)^2, g = 2(x - 3)
    lr, x = 0.1, 0.0
    m = v = 0.0
    expected = []
    for t in range(1, 11):
        g = 2 * (x - 3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + 1e-8)
        expected.append(x)
    p = T.parameter([[0.0]])
    opt = Adam([p], lr)
    got = []
    for _ in range(10):
        T.backward(T.sum(T.square(T.sub(p, 3.0))))
        opt.step()
        got.append(p.value[0, 0])
    assert np.allclose(got, expected, rtol=0, atol=1e-10)


def test_adam_rejects_non_finite_gradient_by_name():
    p = T.parameter([[1.0]])
    with pytest.raises(TrainingDivergedError, match="layer.W0"):
        adam_step([p], [np.array([[np.nan]])], AdamState(), 0.1, names=["layer.W0"])
    with pytest.raises(ContractError):
        adam_step([p], [np.zeros((1, 1))], AdamState(), 0.0)


# --- configuration ----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=16, anchors=30)
    with pytest.raises(ConfigError):
        TrainConfig(student_lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(method="magic")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"sed": 1})
    with pytest.raises(ConfigError):
        TrainConfig(alpha=0, beta=0, gamma=0)
    assert TrainConfig.from_dict(SMALL.to_dict()) == SMALL
    assert SMALL.hash() == TrainConfig.from_dict(SMALL.to_dict()).hash()
    assert SMALL.hash() != SMALL.replace(seed=1).hash()


def test_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.anchors, c.teacher_epochs, c.align_epochs, c.student_epochs, c.patience) == \
        (128, 30, 100, 50, 100, 15)
    assert (c.alpha, c.beta, c.gamma, c.epsilon) == (1.0, 1.0, 0.1, 0.05)


def test_direction_and_weights():
    assert (SMALL.prevalent, SMALL.privileged) == ("a", "b")
    wes = SMALL.replace(direction="WES")
    assert (wes.prevalent, wes.privileged) == ("b", "a")
    w = SMALL.replace(method="none").loss_weights()
    assert (w.beta, w.gamma) == (0.0, 0.0)
    w = SMALL.replace(method="pkdot-single").loss_weights()
    assert (w.beta, w.gamma) == (1.0, 0.0)
    w = SMALL.loss_weights()
    assert (w.alpha, w.beta, w.gamma) == (1.0, 1.0, 0.1)


# --- stage 1 and 2 ----------------------------------------------------------------

def test_teacher_fits_linearly_separable_data():
    data = small_data(n=1000, noise_a=0.0, noise_b=0.0, unreliability=0.0, privileged_informativeness=0.0)
    x = np.hstack([data.raw_a, data.raw_b])[data.train]
    y = data.targets[data.train, 0]
    # separability witness: a linear rule already classifies the training set
    assert np.mean((least_squares_fit(x, 2 * y - 1)(x) > 0) == (y > 0.5)) > 0.97
    teacher = train_teacher(SMALL.replace(teacher_epochs=50, patience=50), data)
    _, pred = teacher.forward(data.raw_a[data.train], data.raw_b[data.train])
    assert np.mean(pred.value.argmax(axis=1) == y) > 0.95


def test_teacher_frozen_with_history(stack):
    data, teacher, pool, before = stack
    assert teacher.frozen and teacher.tnet.frozen
    assert teacher.history[0]["epoch"] == 0
    assert 0.5 <= teacher_test_metric(teacher, data) <= 1.0


def test_hallucination_shape(stack):
    data, teacher, _, _ = stack
    h = hallucinated_features(teacher, data, SMALL)
    assert h.shape == (600, SMALL.feature_dim)


@pytest.mark.parametrize("seed", range(5))
def test_alignment_improves(seed):
    data = small_data(seed=seed)
    cfg = SMALL.replace(seed=seed, align_epochs=30, patience=30)
    teacher = train_teacher(cfg, data)
    report = align_teachers(teacher, cfg, data).alignment_report
    assert report["align_loss_final"] < report["align_loss_initial"]
    for name in ("a", "b"):
        assert report["cosine_after"][name] > report["cosine_before"][name]


def test_alignment_without_backbones(stack):
    data, teacher, _, _ = stack
    pool = align_teachers(teacher, SMALL, data, backbones=())
    assert pool.names == [JOINT]


def test_alignment_requires_frozen_teacher(stack):
    data, teacher, _, _ = stack
    teacher.unfreeze()
    try:
        with pytest.raises(ContractError):
            align_teachers(teacher, SMALL, data)
    finally:
        teacher.freeze()


# --- stage 3 ----------------------------------------------------------------------

def test_stage_isolation_and_selection_log(stack):
    data, teacher, pool, before = stack
    tnet_hash = teacher.tnet.param_hash()
    pool_hash = pool.param_hash()
    _, rec = train_student(pool, SMALL, data)
    assert teacher.param_hash() == before
    assert teacher.tnet.param_hash() == tnet_hash
    assert pool.param_hash() == pool_hash
    assert sum(rec.selection_counts.values()) == rec.n_batches == len(rec.selection_log)
    epochs_run = max(r["epoch"] for r in rec.rows)
    assert rec.n_batches == epochs_run * (len(data.train) // SMALL.batch_size)
    assert abs(sum(rec.selection_percent.values()) - 100.0) < 1e-9
    for _, _, _, selected, joint in rec.selection_log:
        assert selected <= joint


def test_zero_distillation_weights_equal_no_distillation(stack):
    data, _, pool, _ = stack
    _, plain = train_student(pool, SMALL.replace(method="none"), data)
    _, degenerate = train_student(pool, SMALL.replace(beta=0.0, gamma=0.0), data)
    assert degenerate.student_hash == plain.student_hash
    assert degenerate.test_metric == plain.test_metric
    assert degenerate.best_val_metric == plain.best_val_metric
    assert [r["metric"] for r in degenerate.rows] == [r["metric"] for r in plain.rows]
    assert [r["task_loss"] for r in degenerate.rows] == [r["task_loss"] for r in plain.rows]


def test_single_teacher_always_joint(stack):
    data, _, pool, _ = stack
    _, rec = train_student(pool, SMALL.replace(method="pkdot-single"), data)
    assert rec.selection_percent[JOINT] == 100.0


def test_run_is_reproducible(stack):
    data, _, pool, _ = stack
    a = train_student(pool, SMALL, data)[1].to_dict(include_log=True)
    b = train_student(pool, SMALL, data)[1].to_dict(include_log=True)
    a.pop("wall_clock_s")
    b.pop("wall_clock_s")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


@pytest.mark.parametrize("method", ["cosine", "mse", "kl"])
def test_pointwise_baselines_run(stack, method):
    data, _, pool, _ = stack
    _, rec = train_student(pool, SMALL.replace(method=method), data)
    assert 0.0 <= rec.test_metric <= 1.0
    assert sum(rec.selection_counts.values()) == 0


def test_record_files_and_dumps(stack, tmp_path):
    data, _, pool, _ = stack
    _, rec = train_student(pool, SMALL, data, sim_dump_dir=tmp_path / "sim", ot_dump_dir=tmp_path / "ot")
    rec.write(tmp_path / "run")
    run = json.loads((tmp_path / "run" / "run.json").read_text())
    assert run["config_hash"] == SMALL.hash()
    assert run["selection_percent"].keys() == {"a", "b", JOINT}
    with open(tmp_path / "run" / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert len(rows) == 1 + len(rec.rows)
    sims = sorted(p.name for p in (tmp_path / "sim").iterdir())
    assert "sim_teacher.csv" in sims and "sim_epoch_0.csv" in sims
    s = T.load_csv(tmp_path / "sim" / "sim_epoch_1.csv")
    assert s.shape == (SMALL.batch_size, SMALL.batch_size)
    assert np.allclose(np.diag(s), 1.0)
    plan = T.load_csv(tmp_path / "ot" / "plan_epoch_1.csv")
    assert plan.shape == (SMALL.batch_size, SMALL.batch_size)
    assert abs(plan.sum() - 1.0) < 1e-6


def test_regression_and_reverse_direction():
    data = small_data("regression", seed=1)
    cfg = SMALL.replace(direction="WES", teacher_epochs=3, align_epochs=3, student_epochs=2)
    teacher = train_teacher(cfg, data)
    pool = align_teachers(teacher, cfg, data)
    student, rec = train_student(pool, cfg, data)
    assert student.prevalent == "b"
    assert -1.0 <= rec.test_metric <= 1.0
    assert len(rec.test_report["ccc"]) == 2


def test_gated_fusion_runs():
    data = small_data(seed=2)
    cfg = SMALL.replace(fusion="gated", teacher_epochs=2, align_epochs=2, student_epochs=1)
    pool = align_teachers(train_teacher(cfg, data), cfg, data)
    assert train_student(pool, cfg, data)[1].n_batches > 0


def test_divergence_reports_stage_epoch_and_lr(monkeypatch):
    data = small_data(seed=3, n=200)
    real = training.losses.task_loss
    calls = []

    def blows_up_in_epoch_two(pred, targets, kind):
        calls.append(1)
        if len(calls) > 6:  # 1 val pass + 4 batches + 1 val pass, then NaN
            return T.custom(np.array([[np.nan]]), (), None)
        return real(pred, targets, kind)

    monkeypatch.setattr(training.losses, "task_loss", blows_up_in_epoch_two)
    with pytest.raises(TrainingDivergedError, match=r"teacher diverged at epoch 2 \(lr=0.005\)"):
        train_teacher(SMALL.replace(teacher_epochs=3), data)


def test_student_dim_mismatch_is_config_error(stack):
    data, _, pool, _ = stack
    with pytest.raises(ConfigError):
        train_student(pool, SMALL.replace(joint_dim=SMALL.joint_dim + 1), data)


def test_too_few_samples_for_batch(stack):
    data, _, pool, _ = stack
    tiny = dataclasses.replace(data, train=data.train[:10])
    with pytest.raises(ConfigError):
        train_student(pool, SMALL, tiny)
