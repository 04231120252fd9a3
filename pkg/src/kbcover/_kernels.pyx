# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-cell loops; see ``_kernels_py`` for the reference semantics."""

import numpy as np
from libc.math cimport exp


def cross_kernel(Q, t, Z, double sigma, double tau):
    cdef const double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef Py_ssize_t M = q.shape[0], N = z.shape[0], m, j
    cdef const double[::1] tt = np.ascontiguousarray(np.broadcast_to(np.asarray(t, dtype=np.float64), (M,)))
    out_arr = np.empty((M, N))
    cdef double[:, ::1] out = out_arr
    cdef double a = 1.0 / (2.0 * sigma * sigma), b = 1.0 / (2.0 * tau * tau)
    cdef double d1, d2, dt
    with nogil:
        for m in range(M):
            for j in range(N):
                d1 = q[m, 0] - z[j, 0]
                d2 = q[m, 1] - z[j, 1]
                dt = tt[m] - z[j, 2]
                out[m, j] = exp(-(d1 * d1 + d2 * d2) * a - dt * dt * b)
    return out_arr


def objective_rows(lam, Alam, Ks, Y):
    """Per-row ``lam.Alam - 2 Ks.lam + 1`` and ``lam.Y``."""
    cdef const double[:, ::1] l = np.ascontiguousarray(lam, dtype=np.float64)
    cdef const double[:, ::1] al = np.ascontiguousarray(Alam, dtype=np.float64)
    cdef const double[:, ::1] k = np.ascontiguousarray(Ks, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t M = l.shape[0], N = l.shape[1], m, i
    J_arr = np.empty(M)
    pred_arr = np.empty(M)
    cdef double[::1] Jo = J_arr
    cdef double[::1] po = pred_arr
    cdef double quad, lin, pr
    with nogil:
        for m in range(M):
            quad = 0.0
            lin = 0.0
            pr = 0.0
            for i in range(N):
                quad = quad + l[m, i] * al[m, i]
                lin = lin + k[m, i] * l[m, i]
                pr = pr + y[i] * l[m, i]
            Jo[m] = quad - 2.0 * lin + 1.0
            po[m] = pr
    return J_arr, pred_arr


def measurement_field(Q, agents, double C, double r):
    cdef const double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] ag = np.ascontiguousarray(np.asarray(agents, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t M = q.shape[0], n = ag.shape[0], m, i
    out_arr = np.zeros(M)
    cdef double[::1] out = out_arr
    cdef double r2 = r * r
    cdef double scale = C / (r2 * r2)
    cdef double d1, d2, sq
    with nogil:
        for m in range(M):
            for i in range(n):
                d1 = q[m, 0] - ag[i, 0]
                d2 = q[m, 1] - ag[i, 1]
                sq = d1 * d1 + d2 * d2
                if sq <= r2:
                    out[m] += scale * (sq - r2) * (sq - r2)
    return out_arr


def disk_moments(Q, p, hprime, phi, double C, double r):
    cdef const double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[::1] hp = np.ascontiguousarray(hprime, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double p1 = p[0], p2 = p[1]
    cdef Py_ssize_t M = q.shape[0], m
    cdef double r2 = r * r
    cdef double scale = 2.0 * C / (r2 * r2)
    cdef double d1, d2, sq, w
    cdef double m1 = 0.0, m2 = 0.0
    cdef long n_in = 0, n_unsat = 0
    with nogil:
        for m in range(M):
            d1 = q[m, 0] - p1
            d2 = q[m, 1] - p2
            sq = d1 * d1 + d2 * d2
            if sq <= r2:
                n_in += 1
                if hp[m] != 0.0:
                    n_unsat += 1
                    w = hp[m] * scale * (sq - r2) * ph[m]
                    m1 += w * d1
                    m2 += w * d2
    return m1, m2, n_in, n_unsat
