"""Pure numpy implementations of the per-cell hot loops.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or ``KBCOVER_PURE_PYTHON`` is set.
"""

import numpy as np


def cross_kernel(Q, t, Z, sigma, tau):
    """Gaussian space-time kernel between query rows ``(q1, q2)`` at time(s) ``t`` and ``Z``."""
    Q = np.asarray(Q, dtype=float)
    Z = np.asarray(Z, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), (Q.shape[0],))
    d1 = Q[:, 0, None] - Z[None, :, 0]
    d2 = Q[:, 1, None] - Z[None, :, 1]
    dt = t[:, None] - Z[None, :, 2]
    return np.exp(-(d1 * d1 + d2 * d2) / (2.0 * sigma * sigma) - dt * dt / (2.0 * tau * tau))


def objective_rows(lam, Alam, Ks, Y):
    """Per-row ``lam.Alam - 2 Ks.lam + 1`` and ``lam.Y``."""
    J = np.einsum("mi,mi->m", lam, Alam) - 2.0 * np.einsum("mi,mi->m", Ks, lam) + 1.0
    return J, lam @ Y


def measurement_field(Q, agents, C, r):
    """Sum over agents of the quartic sensing footprint at every query row."""
    Q = np.asarray(Q, dtype=float)
    out = np.zeros(Q.shape[0])
    r2 = r * r
    scale = C / (r2 * r2)
    for a in np.asarray(agents, dtype=float).reshape(-1, 2):
        s = (Q[:, 0] - a[0]) ** 2 + (Q[:, 1] - a[1]) ** 2
        inside = s <= r2
        out[inside] += scale * (s[inside] - r2) ** 2
    return out


def disk_moments(Q, p, hprime, phi, C, r):
    """Discrete sum of ``h' M'(s) (q - p) phi`` over cells within ``r`` of ``p``.

    Returns ``(m1, m2, n_inside, n_unsatisfied)``; the cell area factor is
    applied by the caller.
    """
    Q = np.asarray(Q, dtype=float)
    d1 = Q[:, 0] - p[0]
    d2 = Q[:, 1] - p[1]
    s = d1 * d1 + d2 * d2
    r2 = r * r
    inside = s <= r2
    hp = hprime[inside]
    w = hp * (2.0 * C / (r2 * r2)) * (s[inside] - r2) * phi[inside]
    m1 = float(np.sum(w * d1[inside]))
    m2 = float(np.sum(w * d2[inside]))
    return m1, m2, int(inside.sum()), int(np.count_nonzero(hp))
