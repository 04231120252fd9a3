"""Derivative-free tuning of kernel and coverage parameters.

The objective is the time-averaged prediction error of closed-loop runs on
a training window, averaged over training seeds. It is a nonsmooth seeded
simulation, so a box-constrained Nelder-Mead simplex is used.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .sim import ScenarioConfig, run_scenario

__all__ = [
    "TuneError",
    "DEFAULT_BOUNDS",
    "TuneSpec",
    "TraceEntry",
    "TuneResult",
    "apply_params",
    "current_params",
    "scenario_objective",
    "nelder_mead_box",
    "tune",
    "write_trace",
]

#: box bounds used when a free parameter has no explicit bounds
DEFAULT_BOUNDS = {
    "beta": (1e-5, 1.0),
    "sigma": (0.01, 2.0),
    "tau": (0.01, 5.0),
    "k": (1e-3, 1.0),
    "k_hat": (1e-2, 1.0),
    "delta": (-1.0, -1e-3),
}

_SECTION = {"beta": "kernel", "sigma": "kernel", "tau": "kernel", "k": "coverage", "k_hat": "coverage", "delta": "coverage"}
_POSITIVE = ("beta", "sigma", "tau", "k", "k_hat")


class TuneError(ValueError):
    pass


def _split(name: str) -> tuple[str, str]:
    if name in _SECTION:
        return _SECTION[name], name
    if "." in name:
        sec, key = name.split(".", 1)
        return sec, key
    raise TuneError(f"unknown tuning parameter {name!r}")


def _canonical(name: str) -> str:
    sec, key = _split(name)
    return key if _SECTION.get(key) == sec else f"{sec}.{key}"


@dataclass
class TuneSpec:
    """What to tune, within which box, on which training runs.

    ``params`` are the six named model parameters (``beta``, ``sigma``,
    ``tau``, ``k``, ``k_hat``, ``delta``) or any numeric ``section.key`` of
    the scenario config; the latter need explicit ``bounds``. ``window`` is
    the training ``(t0, tT)``; ``seeds`` are the field and simulation seeds
    the error is averaged over. ``seed`` drives the simplex start of the
    restarts.
    """

    params: tuple
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    bounds: dict = field(default_factory=dict)
    window: tuple | None = None
    seeds: tuple = (1,)
    budget: int = 0
    seed: int = 0
    restarts: int = 0
    xtol: float = 1e-4
    ftol: float = 1e-7

    def __post_init__(self):
        self.params = tuple(_canonical(p) for p in self.params)
        self.bounds = {_canonical(k): (float(v[0]), float(v[1])) for k, v in self.bounds.items()}
        if self.budget <= 0:
            self.budget = 10 * (len(self.params) + 1)

    @property
    def dim(self) -> int:
        return len(self.params)

    def box(self) -> list[tuple[float, float]]:
        out = []
        for p in self.params:
            b = self.bounds.get(p, DEFAULT_BOUNDS.get(p))
            if b is None:
                raise TuneError(f"no bounds given for free parameter {p!r}")
            out.append(b)
        return out

    def validate(self) -> None:
        if not self.params:
            raise TuneError("no free parameters to tune")
        if len(set(self.params)) != len(self.params):
            raise TuneError("free parameters must be distinct")
        for p in self.params:
            sec, key = _split(p)
            target = getattr(self.base, sec, None)
            if target is None or not hasattr(target, key):
                raise TuneError(f"unknown tuning parameter {p!r}")
        for p, (lo, hi) in zip(self.params, self.box()):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise TuneError(f"bounds for {p!r} must be finite with lower < upper")
            if p == "delta" and hi > 0:
                raise TuneError("upper bound of delta must be <= 0")
            if p in _POSITIVE and lo <= 0:
                raise TuneError(f"lower bound of {p!r} must be > 0")
        if self.budget < 10 * (self.dim + 1):
            raise TuneError(f"budget {self.budget} below 10 * (dim + 1) = {10 * (self.dim + 1)}")
        if self.restarts < 0:
            raise TuneError("restarts must be >= 0")
        if not self.seeds:
            raise TuneError("need at least one training seed")


@dataclass
class TraceEntry:
    eval: int
    restart: int
    params: dict
    E: float


@dataclass
class TuneResult:
    best: dict
    best_E: float
    trace: list

    def incumbent(self) -> np.ndarray:
        """Best objective found so far after each evaluation."""
        return np.minimum.accumulate([t.E for t in self.trace])


def current_params(cfg: ScenarioConfig, names) -> dict:
    out = {}
    for n in names:
        sec, key = _split(n)
        out[_canonical(n)] = float(getattr(getattr(cfg, sec), key))
    return out


def apply_params(cfg: ScenarioConfig, params: dict) -> ScenarioConfig:
    """Copy of ``cfg`` with the given parameters substituted."""
    cfg = copy.deepcopy(cfg)
    by_sec: dict = {}
    for name, v in params.items():
        sec, key = _split(name)
        by_sec.setdefault(sec, {})[key] = v
    for sec, kv in by_sec.items():
        obj = getattr(cfg, sec)
        cur = {k: type(getattr(obj, k))(v) for k, v in kv.items()}
        if getattr(type(obj), "__dataclass_params__").frozen:
            setattr(cfg, sec, replace(obj, **cur))
        else:
            for k, v in cur.items():
                setattr(obj, k, v)
    return cfg


def scenario_objective(spec: TuneSpec):
    """Mean training E over ``spec.seeds`` as a function of a parameter dict."""
    base = copy.deepcopy(spec.base)
    if spec.window is not None:
        base.sim.t0, base.sim.tT = int(spec.window[0]), int(spec.window[1])

    def objective(params: dict) -> float:
        Es = []
        for s in spec.seeds:
            cfg = apply_params(base, params)
            cfg.field.seed = int(s)
            cfg.sim.seed = int(s)
            Es.append(run_scenario(cfg).E)
        return float(np.mean(Es))

    return objective


# ---------------------------------------------------------------------------
# box-constrained simplex


class _Scale:
    """Maps each bounded coordinate to [0, 1]; log scale when the box spans two decades or more."""

    def __init__(self, box):
        self.lo = np.array([b[0] for b in box])
        self.hi = np.array([b[1] for b in box])
        self.log = (self.lo > 0) & (self.hi / np.where(self.lo > 0, self.lo, 1.0) >= 100.0)
        self.a = np.where(self.log, np.log(np.where(self.log, self.lo, 1.0)), self.lo)
        self.b = np.where(self.log, np.log(np.where(self.log, self.hi, 1.0)), self.hi)

    def to_unit(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        g = np.where(self.log, np.log(np.where(self.log, x, 1.0)), x)
        return (g - self.a) / (self.b - self.a)

    def from_unit(self, u):
        g = self.a + np.asarray(u, dtype=float) * (self.b - self.a)
        x = np.where(self.log, np.exp(g), g)
        # exp/log round-off must not leak past the box
        return np.clip(x, self.lo, self.hi)


def _reflect_project(u):
    u = np.where(u < 0.0, -u, u)
    u = np.where(u > 1.0, 2.0 - u, u)
    return np.clip(u, 0.0, 1.0)


def nelder_mead_box(f, u0, budget: int, step: float = 0.2, xtol: float = 1e-4, ftol: float = 1e-7):
    """Minimize ``f`` over the unit box from ``u0``.

    Trial points leaving the box are reflected back across the violated
    face and then projected. Stops after ``budget`` evaluations or when the
    simplex has collapsed in both position and value.

    Returns
    -------
    (u_best, f_best, n_evals)
    """
    u0 = _reflect_project(np.asarray(u0, dtype=float))
    d = u0.size
    n_eval = 0

    def ev(u):
        nonlocal n_eval
        n_eval += 1
        return f(u)

    simplex = [u0]
    for i in range(d):
        v = u0.copy()
        v[i] = v[i] + step if v[i] + step <= 1.0 else v[i] - step
        simplex.append(v)
    simplex = np.array(simplex)
    fs = []
    for v in simplex:
        if n_eval >= budget:
            break
        fs.append(ev(v))
    if len(fs) < d + 1:
        i = int(np.argmin(fs))
        return simplex[i], fs[i], n_eval
    fs = np.array(fs)

    while n_eval < budget:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) <= xtol and fs[-1] - fs[0] <= ftol:
            break
        c = simplex[:-1].mean(axis=0)
        xr = _reflect_project(c + (c - simplex[-1]))
        fr = ev(xr)
        if fr < fs[0]:
            if n_eval >= budget:
                simplex[-1], fs[-1] = xr, fr
                break
            xe = _reflect_project(c + 2.0 * (c - simplex[-1]))
            fe = ev(xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if n_eval >= budget:
            break
        if fr < fs[-1]:
            xc = c + 0.5 * (xr - c)
        else:
            xc = c + 0.5 * (simplex[-1] - c)
        fc = ev(xc)
        if fc < min(fr, fs[-1]):
            simplex[-1], fs[-1] = xc, fc
            continue
        if fr < fs[-1]:
            simplex[-1], fs[-1] = xr, fr
        # shrink toward the best vertex
        for i in range(1, d + 1):
            if n_eval >= budget:
                break
            simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
            fs[i] = ev(simplex[i])
    i = int(np.argmin(fs))
    return simplex[i], float(fs[i]), n_eval


def tune(spec: TuneSpec, objective=None, progress=None) -> TuneResult:
    """Tune ``spec.params`` to minimise the training objective.

    The first start is the base config's own parameter values (clipped into
    the box); each restart starts from a uniform draw of the seeded
    generator. The evaluation budget is shared evenly across starts.
    ``objective`` maps a parameter dict to a float and defaults to the
    scenario objective; NaN values count as ``+inf``.
    """
    spec.validate()
    box = spec.box()
    scale = _Scale(box)
    objective = scenario_objective(spec) if objective is None else objective
    rng = np.random.default_rng(spec.seed)
    trace: list[TraceEntry] = []
    restart = 0

    def f(u):
        x = scale.from_unit(u)
        params = {p: float(v) for p, v in zip(spec.params, x)}
        val = float(objective(params))
        if math.isnan(val):
            val = math.inf
        trace.append(TraceEntry(len(trace) + 1, restart, params, val))
        if progress is not None:
            progress(trace[-1])
        return val

    starts = spec.restarts + 1
    x0 = np.array(list(current_params(spec.base, spec.params).values()))
    for restart in range(starts):
        u0 = scale.to_unit(x0) if restart == 0 else rng.uniform(0.0, 1.0, spec.dim)
        remaining = spec.budget - len(trace)
        share = remaining // (starts - restart)
        if share < spec.dim + 1:
            break
        nelder_mead_box(f, u0, share, xtol=spec.xtol, ftol=spec.ftol)

    best = min(trace, key=lambda t: (t.E, t.eval))
    return TuneResult(dict(best.params), best.E, trace)


def write_trace(path, result: TuneResult) -> None:
    names = list(result.trace[0].params) if result.trace else []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eval", "restart", *names, "E"])
        for t in result.trace:
            w.writerow([t.eval, t.restart, *(f"{t.params[n]:.9g}" for n in names), f"{t.E:.9g}"])
