"""Pure-numpy versions of the compiled kernels (same iteration order)."""
import numpy as np


# same floor as the compiled kernel
LSE_FLOOR = -700.0


def _lse_rows(x):
    mx = x.max(axis=1)
    return mx + np.log(np.exp(np.maximum(x - mx[:, None], LSE_FLOOR)).sum(axis=1))


def sinkhorn_log(cost, log_mu, log_nu, eps, max_iters, tol):
    """Run log-domain Sinkhorn; returns (f, g, iterations, violation)."""
    n, m = cost.shape
    ks = cost / eps
    ks_t = np.ascontiguousarray(ks.T)
    # potentials divided by eps
    a = np.zeros(n)
    b = np.zeros(m)
    mu = np.exp(log_mu)
    viol = np.inf
    it = 0
    while True:
        lse = _lse_rows(b[None, :] - ks)
        if it > 0:
            viol = float(np.max(np.abs(np.exp(a + lse) - mu)))
            if viol < tol or it >= max_iters:
                break
        a = log_mu - lse
        b = log_nu - _lse_rows(a[None, :] - ks_t)
        it += 1
        if not (np.isfinite(a[0]) and np.isfinite(b[0])):
            break
    return a * eps, b * eps, it, viol


def sq_distances(a, b):
    """out[i, j] = ||a_i - b_j||^2."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
