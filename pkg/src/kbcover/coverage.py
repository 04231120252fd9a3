"""Persistent coverage with information decay.

Agents carry a quartic sensing footprint; the information map decays and is
replenished by sensing; the control law pushes agents toward cells whose
information deficit, weighted by an importance map, is largest.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ._backend import kernels as _kern
from .field import MissionGrid

__all__ = [
    "CoverageParams",
    "InformationMap",
    "AgentState",
    "measurement",
    "measurement_deriv",
    "measurement_map",
    "measurement_field",
    "info_step",
    "penalty",
    "penalty_deriv",
    "objective_H",
    "control_primary",
    "fallback_target",
    "control_fallback",
    "control_switched",
    "lloyd_placement",
    "repulsion",
]

FALLBACK_MODES = ("argmax", "random", "fixed-center")


@dataclass(frozen=True)
class CoverageParams:
    C: float = 0.3
    r: float = 0.5
    delta: float = -0.209257
    k: float = 0.0578
    k_hat: float = 0.399603
    I_ref: float = 1.0

    def __post_init__(self):
        if not (self.C > 0 and self.r > 0):
            raise ValueError("C and r must be positive")
        if self.delta > 0:
            raise ValueError("decay rate delta must be <= 0")
        if not (self.k > 0 and self.k_hat > 0):
            raise ValueError("gains k and k_hat must be positive")
        if not self.I_ref > 0:
            raise ValueError("I_ref must be positive")


@dataclass
class InformationMap:
    grid: MissionGrid
    values: np.ndarray

    @classmethod
    def zeros(cls, grid: MissionGrid) -> "InformationMap":
        return cls(grid, np.zeros(grid.shape))


@dataclass
class AgentState:
    id: int
    p: np.ndarray
    theta: float = 0.0
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(2)
        if not np.all(np.isfinite(self.p)):
            raise ValueError("agent position must be finite")
        self.theta = float(np.angle(np.exp(1j * self.theta)))
        if self.theta == -np.pi:
            self.theta = np.pi


@lru_cache(maxsize=16)
def _centers(grid: MissionGrid) -> np.ndarray:
    c = grid.centers()
    c.setflags(write=False)
    return c


def _flat(values, grid: MissionGrid) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError(f"map shape {arr.shape} does not match grid {grid.shape}")
    return np.ascontiguousarray(arr.reshape(-1))


def _phi_values(phi, grid: MissionGrid) -> np.ndarray:
    if phi is None:
        return np.ones(grid.size)
    if hasattr(phi, "grid"):
        if phi.grid != grid:
            raise ValueError("importance map grid does not match")
        phi = phi.values
    return _flat(phi, grid)


def _iref_values(cp: CoverageParams, grid: MissionGrid, I_ref=None) -> np.ndarray:
    if I_ref is None:
        return np.full(grid.size, cp.I_ref)
    return _flat(I_ref, grid)


# ---------------------------------------------------------------------------
# sensing and information


def measurement(s, cp: CoverageParams):
    """Quartic footprint ``C/r^4 (s - r^2)^2`` for squared distance ``s <= r^2``, else 0."""
    s = np.asarray(s, dtype=float)
    r2 = cp.r * cp.r
    out = np.where(s <= r2, cp.C / (r2 * r2) * (s - r2) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out


def measurement_deriv(s, cp: CoverageParams):
    s = np.asarray(s, dtype=float)
    r2 = cp.r * cp.r
    out = np.where(s <= r2, 2.0 * cp.C / (r2 * r2) * (s - r2), 0.0)
    return float(out) if out.ndim == 0 else out


def measurement_map(agents, q, cp: CoverageParams) -> float:
    q = np.asarray(q, dtype=float)
    total = 0.0
    for a in agents:
        d = q - a.p
        total += measurement(float(d @ d), cp)
    return total


def measurement_field(grid: MissionGrid, agents, cp: CoverageParams) -> np.ndarray:
    """Measurement map evaluated at every cell center, shaped like the grid."""
    pos = np.array([a.p for a in agents], dtype=float).reshape(-1, 2)
    M = _kern.measurement_field(_centers(grid), pos, cp.C, cp.r)
    return M.reshape(grid.shape)


def info_step(I: InformationMap, agents, cp: CoverageParams, dt: float = 1.0, substeps: int = 1) -> InformationMap:
    """Explicit Euler update of the information map, floored at zero.

    ``substeps`` splits ``dt`` into equal parts; agent positions are held
    fixed across substeps.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    M = measurement_field(I.grid, agents, cp)
    h = dt / substeps
    v = I.values.copy()
    for _ in range(substeps):
        v = np.maximum(0.0, v + h * (cp.delta * v + M))
    return InformationMap(I.grid, v)


def penalty(e):
    e = np.asarray(e, dtype=float)
    out = np.maximum(0.0, e) ** 2
    return float(out) if out.ndim == 0 else out


def penalty_deriv(e):
    e = np.asarray(e, dtype=float)
    out = np.maximum(0.0, 2.0 * e)
    return float(out) if out.ndim == 0 else out


def objective_H(I: InformationMap, phi, cp: CoverageParams, I_ref=None) -> float:
    """Discrete sum of ``h(I_ref - I) * phi`` times cell area."""
    g = I.grid
    e = _iref_values(cp, g, I_ref) - _flat(I.values, g)
    return float(np.sum(penalty(e) * _phi_values(phi, g)) * g.cell_area)


# ---------------------------------------------------------------------------
# control


def _disk(grid: MissionGrid, p, r) -> np.ndarray:
    c = _centers(grid)
    d = c - p
    return np.flatnonzero(np.einsum("ij,ij->i", d, d) <= r * r)


def _primary(agent, I, phi, cp, I_ref):
    g = I.grid
    hprime = penalty_deriv(_iref_values(cp, g, I_ref) - _flat(I.values, g))
    m1, m2, _, n_unsat = _kern.disk_moments(
        _centers(g), agent.p, hprime, _phi_values(phi, g), cp.C, cp.r
    )
    u = -cp.k * g.cell_area * np.array([m1, m2])
    return u, n_unsat


def control_primary(agent: AgentState, I: InformationMap, phi, cp: CoverageParams, I_ref=None) -> np.ndarray:
    """Gradient-style coverage input; exactly zero when no cell in the sensing disk is in deficit."""
    u, n_unsat = _primary(agent, I, phi, cp, I_ref)
    return u if n_unsat else np.zeros(2)


def fallback_target(agent: AgentState, phi, grid: MissionGrid, cp: CoverageParams, rng=None, mode: str = "argmax"):
    """Cell center inside the sensing disk that the fallback law steers to.

    ``argmax`` picks the most important cell (ties: farthest from the agent,
    then lowest cell index) and falls back to a random disk cell when the
    importance is uniform over the disk. Returns ``None`` if the disk holds
    no cell center.
    """
    if mode not in FALLBACK_MODES:
        raise ValueError(f"unknown fallback mode {mode!r}")
    idx = _disk(grid, agent.p, cp.r)
    if idx.size == 0:
        return None
    c = _centers(grid)
    if mode == "fixed-center":
        d = c[idx] - agent.p
        return c[idx[np.argmin(np.einsum("ij,ij->i", d, d))]].copy()
    vals = _phi_values(phi, grid)[idx]
    if mode == "random" or np.ptp(vals) == 0.0:
        rng = np.random.default_rng() if rng is None else rng
        return c[idx[rng.integers(idx.size)]].copy()
    d = c[idx] - agent.p
    dist2 = np.einsum("ij,ij->i", d, d)
    order = np.lexsort((idx, -dist2, -vals))
    return c[idx[order[0]]].copy()


def control_fallback(agent: AgentState, phi, grid: MissionGrid, cp: CoverageParams, rng=None, mode: str = "argmax") -> np.ndarray:
    target = fallback_target(agent, phi, grid, cp, rng, mode)
    if target is None:
        return np.zeros(2)
    return -cp.k_hat * (agent.p - target)


def control_switched(agent: AgentState, I: InformationMap, phi, cp: CoverageParams, rng=None, mode: str = "argmax", I_ref=None):
    """Primary law while any disk cell is in deficit, fallback otherwise.

    Returns ``(u, branch)`` with ``branch`` in ``{"primary", "fallback"}``.
    """
    u, n_unsat = _primary(agent, I, phi, cp, I_ref)
    if n_unsat:
        return u, "primary"
    return control_fallback(agent, phi, I.grid, cp, rng, mode), "fallback"


# ---------------------------------------------------------------------------
# fixed placement and collision avoidance


def _lattice(grid: MissionGrid, n: int) -> np.ndarray:
    w = grid.q1_max - grid.q1_min
    h = grid.q2_max - grid.q2_min
    rows = max(1, int(round(np.sqrt(n * h / w))))
    cols = int(np.ceil(n / rows))
    pts = []
    for a in range(rows):
        for b in range(cols):
            pts.append((grid.q1_min + (b + 0.5) * w / cols, grid.q2_min + (a + 0.5) * h / rows))
    return np.array(pts[:n])


def lloyd_placement(grid: MissionGrid, n: int, seed: int = 0, tol: float = 1e-6, max_iter: int = 500) -> np.ndarray:
    """Centroidal Voronoi placement of ``n`` sites under uniform density on the cell grid.

    Starts from a jittered lattice and alternates nearest-site assignment of
    cell centers with moving every site to the centroid of its cells.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    c = _centers(grid)
    sites = _lattice(grid, n)
    jitter = 0.1 * np.array([grid.q1_max - grid.q1_min, grid.q2_max - grid.q2_min]) / np.sqrt(n)
    sites = grid.clamp(sites + rng.uniform(-1, 1, sites.shape) * jitter)
    for _ in range(max_iter):
        owner = _assign(c, sites)
        new = sites.copy()
        for i in range(n):
            mine = c[owner == i]
            if len(mine):
                new[i] = mine.mean(axis=0)
        shift = np.max(np.linalg.norm(new - sites, axis=1))
        sites = new
        if shift < tol:
            break
    return sites


def _assign(c, sites):
    d = ((c[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def voronoi_centroids(grid: MissionGrid, sites) -> np.ndarray:
    """Centroid of each site's discrete Voronoi cell (sites without cells are returned unchanged)."""
    sites = np.asarray(sites, dtype=float)
    c = _centers(grid)
    owner = _assign(c, sites)
    out = sites.copy()
    for i in range(len(sites)):
        mine = c[owner == i]
        if len(mine):
            out[i] = mine.mean(axis=0)
    return out


def repulsion(agent: AgentState, others, safety_radius: float, gain: float, cap: float, rng=None) -> np.ndarray:
    """Inverse-distance push away from neighbours closer than ``safety_radius``, norm capped at ``cap``."""
    if safety_radius <= 0:
        raise ValueError("safety_radius must be positive")
    u = np.zeros(2)
    for o in others:
        if o.id == agent.id:
            continue
        diff = agent.p - o.p
        d = float(np.hypot(*diff))
        if d >= safety_radius:
            continue
        if d == 0.0:
            rng = np.random.default_rng() if rng is None else rng
            ang = rng.uniform(-np.pi, np.pi)
            return cap * np.array([np.cos(ang), np.sin(ang)])
        u += gain * (1.0 / d - 1.0 / safety_radius) * diff / d
    norm = float(np.hypot(*u))
    if norm > cap:
        u *= cap / norm
    return u


def moved(agent: AgentState, p, theta=None, u=None) -> AgentState:
    return replace(
        agent,
        p=np.asarray(p, dtype=float),
        theta=agent.theta if theta is None else theta,
        u_prev=agent.u_prev if u is None else np.asarray(u, dtype=float),
    )
