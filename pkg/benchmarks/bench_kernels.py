"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeats 20]

Prints one line per (kernel, size) with the best-of-N time for each backend
and the speedup. Both backends run the same iteration count, so the
Sinkhorn numbers compare per-iteration cost directly.
"""
import argparse
import timeit

import numpy as np

from otdistill import _kernels_py

try:
    from otdistill import _kernels as _compiled
except ImportError:
    _compiled = None


def _sinkhorn_args(n, rng):
    cost = rng.uniform(0, 2, size=(n, n))
    log_m = np.full(n, -np.log(n))
    # tol=0 forces exactly max_iters sweeps on both sides
    return cost, log_m, log_m.copy(), 0.05, 200, 0.0


def _best(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def run(repeats: int) -> list[tuple]:
    rng = np.random.default_rng(0)
    rows = []
    for n in (32, 64, 128, 256):
        args = _sinkhorn_args(n, rng)
        t_py = _best(lambda: _kernels_py.sinkhorn_log(*args), repeats)
        t_c = _best(lambda: _compiled.sinkhorn_log(*args), repeats) if _compiled else float("nan")
        rows.append(("sinkhorn_log x200", n, t_py, t_c))
    for n, m in ((128, 30), (256, 64)):
        a, b = rng.normal(size=(n, m)), rng.normal(size=(n, m))
        t_py = _best(lambda: _kernels_py.sq_distances(a, b), repeats)
        t_c = _best(lambda: _compiled.sq_distances(a, b), repeats) if _compiled else float("nan")
        rows.append((f"sq_distances m={m}", n, t_py, t_c))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    if _compiled is None:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'kernel':<20} {'n':>5} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, n, t_py, t_c in run(args.repeats):
        print(f"{name:<20} {n:>5} {t_py * 1e3:>10.3f} {t_c * 1e3:>10.3f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
