"""Bayes-optimal prevalent-only performance on standard_config.

A student only sees modality A, which carries the shared latent and nothing
else, so no amount of distillation can beat the Bayes predictor built from
x_A alone. This script replays the generator's parameter draws, computes that
predictor in closed form and prints it next to what the trained ladder
reaches.

Classification: P(y=1 | x) mixes the Gaussian posterior of the shared latent
(reliable rows) with 1/2 (rows replaced by noise). Regression: CCC is
maximized by a rescaled posterior mean, so the ceiling is corr(E[y|x], y).

    python benchmarks/prevalent_ceiling.py
"""
import math

import numpy as np

from otdistill.synthdata import generate, rng_stream, standard_config

GH_X, GH_W = np.polynomial.hermite_e.hermegauss(60)
GH_W = GH_W / GH_W.sum()


def replay(spec, data):
    """Generator parameters for ``spec`` (same draw order as ``generate``)."""
    rng = rng_stream(spec.seed, "data")
    n, s, p = spec.n_samples, spec.shared_dim, spec.privileged_dim
    z_s = rng.normal(size=(n, s))
    rng.normal(size=(n, p))
    m_a = rng.normal(size=(spec.dim_a, s)) / np.sqrt(s)
    rng.normal(size=(spec.dim_b, s + p))
    clean_a = z_s @ m_a.T + spec.noise_a * rng.normal(size=(n, spec.dim_a))
    rng.normal(size=(n, spec.dim_b))
    n_bad = int(round(spec.unreliability * n))
    bad = rng.choice(n, size=n_bad, replace=False)
    col_std = clean_a.std(axis=0)
    rng.normal(size=(n_bad, spec.dim_a))
    n_out = spec.n_outputs if spec.task == "regression" else 1
    w_s = rng.normal(size=(n_out, s))
    w_s /= np.linalg.norm(w_s, axis=1, keepdims=True)
    good = np.ones(n, bool)
    good[bad] = False
    if not np.array_equal(clean_a[good], data.raw_a[good]):
        raise RuntimeError("generator draw order changed; update replay()")
    return m_a, col_std, w_s


def gaussian_logpdf(x, cov):
    sign, logdet = np.linalg.slogdet(cov)
    sol = np.linalg.solve(cov, x.T).T
    return -0.5 * ((x * sol).sum(axis=1) + logdet + x.shape[1] * math.log(2 * math.pi))


def posterior(spec, data):
    """P(row reliable | x), mean and variance of the target latent given x."""
    m_a, col_std, w_s = replay(spec, data)
    x, sig, rho, u = data.raw_a, spec.noise_a, spec.privileged_informativeness, spec.unreliability
    cov_s = np.linalg.inv(np.eye(m_a.shape[1]) + m_a.T @ m_a / sig**2)
    mu = x @ m_a @ cov_s.T / sig**2
    log_good = gaussian_logpdf(x, m_a @ m_a.T + sig**2 * np.eye(len(m_a)))
    log_bad = gaussian_logpdf(x, np.diag(col_std**2))
    p_good = 1.0 / (1.0 + np.exp(log_bad - log_good) * u / (1.0 - u))
    mean = (1 - rho) * mu @ w_s.T
    var = (1 - rho) ** 2 * np.einsum("oi,ij,oj->o", w_s, cov_s, w_s) + rho**2
    return p_good, mean, var


def ceiling(task, seed):
    spec = standard_config(task, seed)
    data = generate(spec)
    p_good, mean, var = posterior(spec, data)
    te = data.test
    if task == "classification":
        z = mean[:, 0] / math.sqrt(2 * var[0])
        p1 = p_good * 0.5 * (1 + np.vectorize(math.erf)(z)) + (1 - p_good) * 0.5
        return float(((p1 > 0.5) == data.targets[:, 0])[te].mean())
    y = data.targets
    scores = []
    for o in range(y.shape[1]):
        cond = (np.tanh(mean[:, o, None] + math.sqrt(var[o]) * GH_X) * GH_W).sum(axis=1)
        scores.append(np.corrcoef(p_good[te] * cond[te], y[te, o])[0, 1])
    return float(np.mean(scores))


def main():
    for task, metric in (("classification", "accuracy"), ("regression", "mean CCC")):
        vals = [ceiling(task, s) for s in range(5)]
        print(f"{task:<15} Bayes prevalent-only test {metric}: "
              + " ".join(f"{v:.4f}" for v in vals) + f"  mean {np.mean(vals):.4f}")


if __name__ == "__main__":
    main()
