import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otdistill import tensor as T
from otdistill.errors import DimensionError, GraphError, NumericalError, ZeroRowError

from helpers import central_diff, check_op_gradient, rel_err


def test_matrix_rejects_nan_and_inf():
    with pytest.raises(NumericalError):
        T.Node([[1.0, np.nan]])
    with pytest.raises(NumericalError):
        T.as_matrix([[np.inf]])


def test_matrix_is_immutable():
    n = T.Node([[1.0, 2.0]])
    with pytest.raises(ValueError):
        n.value[0, 0] = 5.0


def test_matmul_identity():
    eye = T.Node(np.eye(2))
    assert np.array_equal(T.matmul(eye, eye).value, np.eye(2))
    a = T.Node([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(a, eye).value, [[1, 2], [3, 4]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Node(np.ones((2, 3))), T.Node(np.ones((2, 3))))


def test_matmul_gradient_of_sum():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    pa, pb = T.parameter(a), T.parameter(b)
    T.backward(T.sum(T.matmul(pa, pb)))
    fd_a = central_diff(lambda x: (x @ b).sum(), a)
    fd_b = central_diff(lambda x: (a @ x).sum(), b)
    assert rel_err(pa.grad, fd_a) < 1e-6
    assert rel_err(pb.grad, fd_b) < 1e-6


def test_rowwise_l2norm_examples():
    assert np.array_equal(T.rowwise_l2norm(T.Node([[3.0, 4.0]])).value, [[5.0]])
    assert np.array_equal(T.rowwise_l2norm(T.Node(np.eye(3))).value, np.ones((3, 1)))
    x = np.random.default_rng(1).normal(size=(4, 3))
    oracle = [[sum(v * v for v in row) ** 0.5] for row in x]
    assert np.allclose(T.rowwise_l2norm(T.Node(x)).value, oracle, rtol=0, atol=1e-12)


def test_rowwise_l2norm_zero_row():
    with pytest.raises(ZeroRowError) as info:
        T.rowwise_l2norm(T.Node([[1.0, 0.0], [0.0, 0.0]]))
    assert info.value.row == 1


def test_backward_trivial_cases():
    w = T.parameter(np.ones((2, 2)) * 0.3)
    T.backward(T.sum(w))
    assert np.array_equal(w.grad, np.ones((2, 2)))
    w = T.parameter([[1.0, 2.0], [3.0, 4.0]])
    T.backward(T.sum(T.mul(w, w)))
    assert np.array_equal(w.grad, [[2.0, 4.0], [6.0, 8.0]])


def test_backward_rejects_non_scalar_and_reuse():
    w = T.parameter(np.ones((2, 2)))
    with pytest.raises(GraphError):
        T.backward(T.mul(w, w))
    loss = T.sum(T.mul(w, w))
    T.backward(loss)
    with pytest.raises(GraphError):
        T.backward(loss)


def test_backward_visits_shared_node_once():
    x = T.parameter([[2.0]])
    y = T.mul(x, x)
    z = T.add(y, y)  # d/dx 2x^2 = 4x
    T.backward(T.sum(z))
    assert x.grad[0, 0] == 8.0


def test_composite_mlp_gradient():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3))
    w1, b1 = rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
    w2, b2 = rng.normal(size=(4, 2)), rng.normal(size=(1, 2))

    def build(w1, b1, w2, b2):
        h = T.tanh(T.add(T.matmul(T.Node(x), w1), b1))
        return T.sigmoid(T.add(T.matmul(h, w2), b2))

    assert check_op_gradient(build, [w1, b1, w2, b2]) < 1e-5


UNARY = {
    "relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid, "exp": T.exp,
    "square": T.square, "transpose": T.transpose, "softmax_rows": T.softmax_rows,
    "log_softmax_rows": T.log_softmax_rows, "rowwise_l2norm": T.rowwise_l2norm,
    "sum": T.sum, "sum0": lambda a: T.sum(a, axis=0), "sum1": lambda a: T.sum(a, axis=1),
    "mean": T.mean, "mean0": lambda a: T.mean(a, axis=0), "scale": lambda a: T.scale(a, -2.5),
    "gather_cols": lambda a: T.gather_cols(a, [0, 2, 3]),
    "gather_rows": lambda a: T.gather_rows(a, [1, 1, 0]),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(10))
def test_unary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    if name == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # stay off the kink
    assert check_op_gradient(UNARY[name], [x], seed) < 1e-5


def test_positive_only_unary_gradients():
    for seed in range(10):
        x = np.random.default_rng(seed).uniform(0.5, 2.0, size=(3, 4))
        assert check_op_gradient(T.log, [x], seed) < 1e-5
        assert check_op_gradient(T.sqrt, [x], seed) < 1e-5


BINARY = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}
SHAPES = [((3, 4), (3, 4)), ((3, 4), (1, 4)), ((3, 4), (3, 1)), ((1, 1), (3, 4))]


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("shapes", SHAPES)
@pytest.mark.parametrize("seed", range(10))
def test_binary_gradients_with_broadcast(name, shapes, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=shapes[0])
    b = rng.normal(size=shapes[1])
    if name == "div":
        b = np.sign(b) * (np.abs(b) + 0.5)
    assert check_op_gradient(BINARY[name], [a, b], seed) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_matmul_and_concat_gradients(seed):
    rng = np.random.default_rng(seed)
    assert check_op_gradient(T.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], seed) < 1e-5
    cat = lambda a, b: T.concat_cols([a, b])  # noqa: E731
    assert check_op_gradient(cat, [rng.normal(size=(3, 2)), rng.normal(size=(3, 3))], seed) < 1e-5


def test_broadcast_shape_error():
    with pytest.raises(DimensionError):
        T.add(T.Node(np.ones((3, 4))), T.Node(np.ones((2, 4))))


def test_gradient_linearity():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))

    def loss_a(p):
        return T.sum(T.tanh(T.matmul(p, T.Node(np.ones((3, 2))))))

    def loss_b(p):
        return T.mean(T.square(p))

    p = T.parameter(x)
    T.backward(T.add(loss_a(p), loss_b(p)))
    together = p.grad.copy()
    p.zero_grad()
    T.backward(loss_a(p))
    T.backward(loss_b(p))
    assert np.allclose(together, p.grad, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_double_transpose_bitwise(x):
    n = T.Node(x)
    assert np.array_equal(T.transpose(T.transpose(n)).value, n.value)
    assert T.transpose(T.transpose(n)).value.tobytes() == np.ascontiguousarray(n.value).tobytes()


def test_csv_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 4))
    T.save_csv(tmp_path / "m.csv", x)
    assert np.array_equal(T.load_csv(tmp_path / "m.csv"), x)
    col = x[:, :1]
    T.save_csv(tmp_path / "c.csv", col)
    assert T.load_csv(tmp_path / "c.csv").shape == (3, 1)
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert len(text) == 3 and text[0].count(",") == 3
