"""Kernel-based kriging: dissimilarity functions, weight QP and one-step-ahead prediction.

The kriging weights for a query ``z`` minimise

    lambda^T (beta I + K) lambda - 2 k_*^T lambda + 1   s.t.  1^T lambda = 1,

where ``K`` is the Gram matrix of the buffered space-time samples and
``k_*`` their kernel row against ``z``. The optimal value is the
dissimilarity of ``z`` from the buffer; it is non-negative because it equals
``beta |lambda|^2 + |Phi_Z lambda - phi_z|^2`` in feature space.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import LinAlgError, LinAlgWarning

from ._backend import kernels as _kern
from .field import MissionGrid

__all__ = [
    "KrigingError",
    "InfeasibleError",
    "OneStepAheadWarning",
    "SpatioTemporalPoint",
    "KernelParams",
    "SampleBuffer",
    "KrigingSolution",
    "DissimilarityMap",
    "KKTSolver",
    "KrigingSystem",
    "kernel",
    "gram",
    "cross_kernel",
    "solve_qp",
    "solve_weights",
    "predict",
    "dissimilarity_map",
    "dissimilarity_general",
]


class KrigingError(RuntimeError):
    """The bordered KKT system could not be factorized even after ridging."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class InfeasibleError(ValueError):
    """The query is outside the affine hull of the data."""


class OneStepAheadWarning(UserWarning):
    """A prediction was requested at or before the newest buffered step."""


@dataclass(frozen=True)
class SpatioTemporalPoint:
    q1: float
    q2: float
    t: float

    def __post_init__(self):
        if not all(np.isfinite([self.q1, self.q2, self.t])):
            raise ValueError("space-time point coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.t], dtype=float)


@dataclass(frozen=True)
class KernelParams:
    """Gaussian kernel length scales and the ridge weight of the weight QP.

    ``sigma`` is in meters, ``tau`` in planning steps.
    """

    sigma: float = 0.202815
    tau: float = 0.329897
    beta: float = 0.169103

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError("kernel length scales sigma and tau must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")


class SampleBuffer:
    """Sliding window of the last ``L`` sampling steps of ``n`` agents.

    Rows are ordered oldest step first and, within a step, by agent index.
    """

    def __init__(self, L: int, n: int):
        if L < 1 or n < 1:
            raise ValueError("buffer needs L >= 1 and n >= 1")
        self.L = int(L)
        self.n = int(n)
        self._steps: deque = deque(maxlen=self.L)

    def push(self, t, positions, values) -> None:
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        values = np.asarray(values, dtype=float).reshape(-1)
        if len(positions) != len(values):
            raise ValueError("positions and values differ in length")
        if len(values) > self.n:
            raise ValueError(f"at most {self.n} samples per step")
        if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
            raise ValueError("cloud factor samples must lie in [0, 1]")
        if self._steps and t <= self._steps[-1][0]:
            raise ValueError("buffer steps must be pushed in increasing time order")
        rows = np.column_stack([positions, np.full(len(values), float(t))])
        self._steps.append((t, rows, values.copy()))

    @classmethod
    def from_arrays(cls, Z, Y, L: int | None = None, n: int | None = None) -> "SampleBuffer":
        """Build a buffer from ``(N, 3)`` space-time rows and ``N`` values, grouping rows by time."""
        Z = np.asarray(Z, dtype=float).reshape(-1, 3)
        Y = np.asarray(Y, dtype=float).reshape(-1)
        times = sorted(set(Z[:, 2].tolist()))
        counts = [int(np.sum(Z[:, 2] == t)) for t in times]
        buf = cls(L or max(len(times), 1), n or max(counts, default=1))
        for t in times:
            sel = Z[:, 2] == t
            buf.push(t, Z[sel, :2], Y[sel])
        return buf

    def __len__(self) -> int:
        return sum(len(v) for _, _, v in self._steps)

    @property
    def N(self) -> int:
        return len(self)

    @property
    def full(self) -> bool:
        return len(self._steps) == self.L and all(len(v) == self.n for _, _, v in self._steps)

    @property
    def newest_t(self):
        return self._steps[-1][0] if self._steps else None

    @property
    def Z(self) -> np.ndarray:
        if not self._steps:
            return np.empty((0, 3))
        return np.ascontiguousarray(np.vstack([rows for _, rows, _ in self._steps]))

    @property
    def Y(self) -> np.ndarray:
        if not self._steps:
            return np.empty(0)
        return np.concatenate([v for _, _, v in self._steps])


@dataclass
class KrigingSolution:
    lam: np.ndarray
    J: float
    ready: bool = True


@dataclass
class DissimilarityMap:
    grid: MissionGrid
    t_pred: float
    values: np.ndarray


def _as_rows(Z) -> np.ndarray:
    if isinstance(Z, SampleBuffer):
        return Z.Z
    return np.asarray(Z, dtype=float).reshape(-1, 3)


def _as_point(z) -> np.ndarray:
    if isinstance(z, SpatioTemporalPoint):
        return z.as_array()
    return np.asarray(z, dtype=float).reshape(3)


def kernel(z, zp, kp: KernelParams) -> float:
    a, b = _as_point(z), _as_point(zp)
    dq = a[:2] - b[:2]
    dt = a[2] - b[2]
    return float(np.exp(-(dq @ dq) / (2 * kp.sigma**2)) * np.exp(-(dt * dt) / (2 * kp.tau**2)))


def gram(Z, kp: KernelParams) -> np.ndarray:
    """Symmetric Gram matrix of the buffered space-time points."""
    rows = _as_rows(Z)
    if len(rows) == 0:
        raise ValueError("empty sample buffer")
    G = _kern.cross_kernel(rows[:, :2], rows[:, 2], rows, kp.sigma, kp.tau)
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, 1.0)
    return G


def cross_kernel(z, Z, kp: KernelParams) -> np.ndarray:
    rows = _as_rows(Z)
    if len(rows) == 0:
        raise ValueError("empty sample buffer")
    p = _as_point(z)
    return _kern.cross_kernel(p[None, :2], p[2], rows, kp.sigma, kp.tau)[0]


REFINE_CONDITION = 1e4


class KKTSolver:
    """Factorized bordered system ``[[2 A, 1], [1^T, 0]]`` with ``A = beta I + K``.

    The symmetric indefinite factorization is done once; any number of
    right-hand sides (kernel rows) are then solved against its inverse
    blocks. A ridge of ``1e-10 trace(H)/N`` is added to ``H = 2 A`` if the
    plain system is singular or numerically rank deficient.
    """

    def __init__(self, K, beta: float):
        K = np.asarray(K, dtype=float)
        N = K.shape[0]
        if N < 1 or K.shape != (N, N):
            raise ValueError("Gram matrix must be square and non-empty")
        self.N = N
        self.A_obj = K + beta * np.eye(N)
        self.ridged = False
        H = 2.0 * self.A_obj
        inv = self._invert(H)
        if inv is None:
            eps = 1e-10 * np.trace(H) / N
            H = H + eps * np.eye(N)
            inv = self._invert(H)
            if inv is None:
                cond = np.linalg.cond(_bordered(H))
                raise KrigingError(
                    f"KKT system singular even after ridge (condition ~ {cond:.3g})", cond
                )
            self.ridged = True
        self.A_solve = 0.5 * H
        self.P = np.ascontiguousarray(inv[:N, :N])
        self.p = np.ascontiguousarray(inv[:N, N])
        self.s = float(inv[N, N])
        self.condition = float(np.linalg.norm(_bordered(H), 1) * np.linalg.norm(inv, 1))
        # a refinement step changes lambda by ~ condition * eps; skip it when negligible
        self.refine = self.condition > REFINE_CONDITION

    @staticmethod
    def _invert(H):
        B = _bordered(H)
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            try:
                return scipy.linalg.solve(B, np.eye(B.shape[0]), assume_a="sym")
            except (LinAlgError, LinAlgWarning):
                return None

    def weights(self, kstar) -> np.ndarray:
        """Optimal weights for one kernel row ``(N,)`` or many ``(M, N)``."""
        Ks = np.atleast_2d(np.asarray(kstar, dtype=float))
        lam = 2.0 * Ks @ self.P + self.p
        if self.refine or Ks.shape[0] == 1:
            nu = 2.0 * Ks @ self.p + self.s
            r1 = 2.0 * lam @ self.A_solve + nu[:, None] - 2.0 * Ks
            r2 = lam.sum(axis=1) - 1.0
            lam = lam - r1 @ self.P - r2[:, None] * self.p
        return lam[0] if np.ndim(kstar) == 1 else lam

    def objective(self, lam, kstar) -> float:
        lam = np.asarray(lam, dtype=float)
        kstar = np.asarray(kstar, dtype=float)
        return float(lam @ self.A_obj @ lam - 2.0 * kstar @ lam + 1.0)


def _bordered(H) -> np.ndarray:
    N = H.shape[0]
    B = np.zeros((N + 1, N + 1))
    B[:N, :N] = H
    B[:N, N] = 1.0
    B[N, :N] = 1.0
    return B


def solve_qp(K, kstar, beta: float) -> KrigingSolution:
    """Solve the weight QP for an explicit Gram matrix and kernel row."""
    solver = KKTSolver(K, beta)
    lam = solver.weights(np.asarray(kstar, dtype=float))
    return KrigingSolution(lam, solver.objective(lam, kstar))


class KrigingSystem:
    """Per-step kriging model over a fixed buffer: one factorization, many queries."""

    def __init__(self, Z, kp: KernelParams, Y=None):
        if isinstance(Z, SampleBuffer):
            if Y is None:
                Y = Z.Y
            Z = Z.Z
        self.Z = np.ascontiguousarray(np.asarray(Z, dtype=float).reshape(-1, 3))
        if len(self.Z) == 0:
            raise ValueError("empty sample buffer")
        self.Y = np.zeros(len(self.Z)) if Y is None else np.ascontiguousarray(Y, dtype=float)
        self.kp = kp
        self.solver = KKTSolver(gram(self.Z, kp), kp.beta)

    def solve(self, z) -> KrigingSolution:
        k = cross_kernel(z, self.Z, self.kp)
        lam = self.solver.weights(k)
        return KrigingSolution(lam, self.solver.objective(lam, k))

    def evaluate(self, points, t_pred: float):
        """Dissimilarity and prediction at ``(M, 2)`` positions for time ``t_pred``."""
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        Ks = _kern.cross_kernel(pts, float(t_pred), self.Z, self.kp.sigma, self.kp.tau)
        lam = self.solver.weights(Ks)
        return _kern.objective_rows(lam, lam @ self.solver.A_obj, Ks, self.Y)

    def evaluate_grid(self, grid: MissionGrid, t_pred: float):
        J, pred = self.evaluate(grid.centers(), t_pred)
        return J.reshape(grid.shape), pred.reshape(grid.shape)


def solve_weights(z, Z, kp: KernelParams) -> KrigingSolution:
    return KrigingSystem(Z, kp).solve(z)


def predict(q, t_pred: float, Z: SampleBuffer, kp: KernelParams):
    """One-step-ahead cloud factor at ``q`` and the dissimilarity of the query.

    The prediction is the weighted sum of buffered samples and is not clamped.
    """
    if Z.newest_t is not None and t_pred <= Z.newest_t:
        warnings.warn(
            f"prediction time {t_pred} is not after newest sample {Z.newest_t}",
            OneStepAheadWarning,
            stacklevel=2,
        )
    sol = KrigingSystem(Z, kp).solve((q[0], q[1], t_pred))
    return float(Z.Y @ sol.lam), sol.J


def dissimilarity_map(grid: MissionGrid, t_pred: float, Z, kp: KernelParams) -> DissimilarityMap:
    J, _ = KrigingSystem(Z, kp).evaluate_grid(grid, t_pred)
    return DissimilarityMap(grid, t_pred, J)


# ---------------------------------------------------------------------------
# general (non-kernel) dissimilarity


def dissimilarity_general(d, D, w=None, gamma: float = 0.0, tol: float = 1e-9):
    """Affine-invariant dissimilarity of ``d`` from the columns of ``D``.

    Minimises ``(1 - gamma) sum w_i lambda_i^2 + gamma sum |lambda_i|`` subject
    to ``D lambda = d`` and ``1^T lambda = 1``. Returns ``(J, lambda)``.

    For ``gamma = 0`` the bordered KKT system is solved directly; otherwise
    ``lambda`` is split into non-negative parts and a primal active-set
    method is run on the resulting non-negative QP.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    d = np.asarray(d, dtype=float).reshape(-1)
    nd, N = D.shape
    if N < 1:
        raise ValueError("D needs at least one column")
    if d.shape[0] != nd:
        raise ValueError("d and D differ in dimension")
    w = np.ones(N) if w is None else np.asarray(w, dtype=float).reshape(N)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")

    B = np.vstack([D, np.ones((1, N))])
    b = np.concatenate([d, [1.0]])
    lam0 = _min_weighted_norm(B, b, w, tol)
    if gamma == 0.0:
        lam = _eqp(2.0 * w, np.zeros(N), B, b)
    else:
        lam = _split_active_set(B, b, w, gamma, lam0, tol)
    J = (1.0 - gamma) * float(w @ lam**2) + gamma * float(np.abs(lam).sum())
    return J, lam


def _min_weighted_norm(B, b, w, tol):
    """Feasibility check and the minimum weighted-norm solution of ``B lambda = b``."""
    sw = 1.0 / np.sqrt(w)
    mu, *_ = np.linalg.lstsq(B * sw, b, rcond=None)
    lam = sw * mu
    scale = max(1.0, np.abs(b).max(), np.abs(B).max())
    if np.linalg.norm(B @ lam - b) > tol * scale * 1e3:
        raise InfeasibleError("infeasible: d is outside the affine hull of D")
    return lam


def _eqp(g_diag, c, E, e):
    """min 1/2 x^T diag(g) x + c^T x  s.t.  E x = e, via the bordered KKT system.

    Solved in the least-squares sense so redundant constraint rows are
    tolerated; ``x`` is unique because ``g > 0``.
    """
    n = len(g_diag)
    m = E.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = np.diag(g_diag)
    kkt[:n, n:] = E.T
    kkt[n:, :n] = E
    rhs = np.concatenate([-c, e])
    sol, *_ = scipy.linalg.lstsq(kkt, rhs)
    return sol[:n]


def _split_active_set(B, b, w, gamma, lam0, tol, max_iter=500):
    N = len(w)
    # x = [lam+, lam-] >= 0, E x = b with E = [B, -B]
    E = np.hstack([B, -B])
    c = gamma * np.ones(2 * N)
    x = np.concatenate([np.maximum(lam0, 0.0), np.maximum(-lam0, 0.0)])
    # working set: variables held at zero; at least one of each pair stays fixed
    fixed = x <= 0.0

    def grad(x):
        lam = x[:N] - x[N:]
        gl = 2.0 * (1.0 - gamma) * w * lam
        return np.concatenate([gl, -gl]) + c

    for _ in range(max_iter):
        free = ~fixed
        idx = np.flatnonzero(free)
        # step p on the free variables: min 1/2 p^T G p + g^T p, E_F p = 0
        g = grad(x)
        Gd = 2.0 * (1.0 - gamma) * np.concatenate([w, w])[idx]
        p_free = _eqp(Gd, g[idx], E[:, idx], np.zeros(E.shape[0]))
        if np.linalg.norm(p_free) <= tol * max(1.0, np.linalg.norm(x)):
            # multipliers: g_F = E_F^T y  (least squares), then z = g - E^T y on the fixed set
            y, *_ = np.linalg.lstsq(E[:, idx].T, g[idx], rcond=None) if len(idx) else (np.zeros(E.shape[0]),)
            z = g - E.T @ y
            zf = np.where(fixed, z, np.inf)
            j = int(np.argmin(zf))
            if zf[j] >= -tol:
                break
            fixed[j] = False
            continue
        p = np.zeros(2 * N)
        p[idx] = p_free
        neg = idx[p_free < 0]
        alpha, block = 1.0, None
        for i in neg:
            a = -x[i] / p[i]
            if a < alpha:
                alpha, block = a, i
        x = x + alpha * p
        if block is not None:
            x[block] = 0.0
            fixed[block] = True
        x[x < 0] = 0.0
    return x[:N] - x[N:]
