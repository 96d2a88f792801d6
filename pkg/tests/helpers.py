"""Independent oracles shared by the test modules."""
import itertools

import numpy as np

from otdistill import tensor as T

FD_STEP = 1e-5


def central_diff(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar ``fn`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for ij in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[ij] += h
        down[ij] -= h
        grad[ij] = (fn(up) - fn(down)) / (2 * h)
    return grad


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), 1e-8))


def check_op_gradient(build, inputs, seed=0):
    """Compare autodiff and central differences for ``sum(build(*nodes) * R)``.

    ``build`` maps nodes to a node; R is a fixed random weighting so every
    output entry contributes. Returns the worst relative error over inputs.
    """
    rng = np.random.default_rng(seed)
    out_shape = build(*[T.Node(x) for x in inputs]).shape
    weight = rng.normal(size=out_shape)

    def scalar(*arrays):
        return float((build(*[T.Node(a) for a in arrays]).value * weight).sum())

    params = [T.parameter(x) for x in inputs]
    loss = T.sum(T.mul(build(*params), T.Node(weight)))
    T.backward(loss)
    worst = 0.0
    for k, p in enumerate(params):
        def fn(xk, k=k):
            arrays = list(inputs)
            arrays[k] = xk
            return scalar(*arrays)
        worst = max(worst, rel_err(p.grad, central_diff(fn, inputs[k])))
    return worst


def brute_force_assignment_cost(cost: np.ndarray) -> float:
    """Exact OT cost for uniform marginals on an n x n cost: by Birkhoff the
    optimum sits at a permutation matrix scaled by 1/n."""
    n = cost.shape[0]
    best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return best / n


def scalar_cosine(u, v) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = sum(a * a for a in u) ** 0.5
    nv = sum(b * b for b in v) ** 0.5
    return dot / (nu * nv)


def scalar_ccc(x, y) -> float:
    """Stepwise CCC: means, population std, Pearson rho, then the formula."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sx = (sum((a - mx) ** 2 for a in x) / n) ** 0.5
    sy = (sum((b - my) ** 2 for b in y) / n) ** 0.5
    rho = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n / (sx * sy)
    return 2 * rho * sx * sy / (sx ** 2 + sy ** 2 + (mx - my) ** 2)


def least_squares_fit(x_train, y_train):
    xa = np.hstack([x_train, np.ones((x_train.shape[0], 1))])
    w, *_ = np.linalg.lstsq(xa, y_train, rcond=None)
    return lambda x: np.hstack([x, np.ones((x.shape[0], 1))]) @ w


def r_squared(pred, y) -> float:
    return 1.0 - ((y - pred) ** 2).sum() / ((y - y.mean(axis=0)) ** 2).sum()


def ls_accuracy(data, columns):
    """Least-squares classifier (regress ±1 labels, threshold at 0) on test."""
    x = np.hstack(columns)
    y = data.targets[:, 0]
    fit = least_squares_fit(x[data.train], 2 * y[data.train] - 1)
    return float(np.mean((fit(x[data.test]) > 0) == (y[data.test] > 0.5)))
