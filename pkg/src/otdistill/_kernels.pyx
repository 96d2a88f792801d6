# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: log-domain Sinkhorn and pairwise squared distances.

Mirrors ``_kernels_py`` in iteration order; the two are checked against each
other in the test suite. Built with -ffast-math so the exp loops vectorize,
hence no inf/nan tests in here: finiteness is checked by the caller.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, fmax

cnp.import_array()

# exp(-700) ~ 1e-304: negligible next to the max term (exactly 1)
DEF LSE_FLOOR = -700.0


cdef inline double _lse_row(const double* ks, const double* pot, double* buf,
                            Py_ssize_t m) noexcept nogil:
    # log sum_j exp(pot_j - ks_j), ks = cost row / eps
    cdef Py_ssize_t j
    cdef double mx = -1.0e300, acc = 0.0
    for j in range(m):
        buf[j] = pot[j] - ks[j]
    for j in range(m):
        if buf[j] > mx:
            mx = buf[j]
    for j in range(m):
        # clamp keeps exp off libmvec's scalar underflow path
        acc += exp(fmax(buf[j] - mx, LSE_FLOOR))
    return mx + log(acc)


def sinkhorn_log(const double[:, ::1] cost, const double[::1] log_mu, const double[::1] log_nu,
                 double eps, int max_iters, double tol):
    """Run log-domain Sinkhorn; returns (f, g, iterations, violation)."""
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1], i, j
    scaled = np.asarray(cost) / eps
    cdef double[:, ::1] ks = scaled
    cdef double[:, ::1] ks_t = np.ascontiguousarray(scaled.T)
    # potentials divided by eps
    a_arr = np.zeros(n)
    b_arr = np.zeros(m)
    cdef double[::1] a = a_arr
    cdef double[::1] b = b_arr
    cdef double[::1] lse = np.empty(n)
    cdef double[::1] buf = np.empty(max(n, m))
    cdef double viol = 1.0e300, r
    cdef int it = 0
    with nogil:
        while True:
            for i in range(n):
                lse[i] = _lse_row(&ks[i, 0], &b[0], &buf[0], m)
            if it > 0:
                viol = 0.0
                for i in range(n):
                    r = fabs(exp(a[i] + lse[i]) - exp(log_mu[i]))
                    if r > viol:
                        viol = r
                if viol < tol or it >= max_iters:
                    break
            for i in range(n):
                a[i] = log_mu[i] - lse[i]
            for j in range(m):
                b[j] = log_nu[j] - _lse_row(&ks_t[j, 0], &a[0], &buf[0], n)
            it += 1
            if viol != viol or a[0] != a[0] or b[0] != b[0]:
                break
    return a_arr * eps, b_arr * eps, it, viol


def sq_distances(const double[:, ::1] a, const double[:, ::1] b):
    """out[i, j] = ||a_i - b_j||^2, summed in feature order."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], k = a.shape[1], i, j, t
    out_arr = np.empty((n, m))
    cdef double[:, ::1] out = out_arr
    cdef double d, acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for t in range(k):
                    d = a[i, t] - b[j, t]
                    acc += d * d
                out[i, j] = acc
    return out_arr
