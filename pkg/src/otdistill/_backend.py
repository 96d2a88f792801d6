"""Kernel backend selection.

The Cython extension is used when it was built; otherwise (or when
``OTDISTILL_PURE_PYTHON=1``) the numpy implementations are used.
"""
import os

from . import _kernels_py

NAME = "python"
kernels = _kernels_py

if os.environ.get("OTDISTILL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        NAME = "cython"


def sinkhorn_log(cost, log_mu, log_nu, eps, max_iters, tol):
    return kernels.sinkhorn_log(cost, log_mu, log_nu, eps, max_iters, tol)


def sq_distances(a, b):
    return kernels.sq_distances(a, b)
