"""Closed-loop sampling/prediction scenarios and method comparison."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from pathlib import Path

import numpy as np

from .coverage import (
    FALLBACK_MODES,
    AgentState,
    CoverageParams,
    InformationMap,
    control_switched,
    info_step,
    lloyd_placement,
    moved,
    objective_H,
    repulsion,
)
from .field import (
    WEATHER_PRESETS,
    FieldSeries,
    MissionGrid,
    load_field_csv,
    sample_at,
    synth_cloud_field,
    time_avg_error,
    write_block_csv,
)
from .kriging import KernelParams, KrigingSystem, SampleBuffer

__all__ = [
    "SimulationError",
    "FieldConfig",
    "AgentConfig",
    "SimConfig",
    "ScenarioConfig",
    "RunLog",
    "EXPERIMENT_INITIAL",
    "EXPERIMENT_PARAMS",
    "SYNTHETIC_TUNED",
    "build_field",
    "initial_positions",
    "step_integrator",
    "step_unicycle",
    "run_scenario",
    "write_run_artifacts",
    "compare_methods",
    "format_table",
]

METHODS = ("fixed", "baseline", "proposed")
DYNAMICS = ("integrator", "unicycle")
INITS = ("auto", "experiment", "lloyd", "random", "explicit")

#: initial mobile-agent positions of the four-robot experiment
EXPERIMENT_INITIAL = ((-0.54, -0.54), (-0.54, 0.86), (0.86, -0.52), (0.80, 0.86))

#: tuned parameters of the four-robot experiment, per method (beta, sigma, tau, k, k_hat, delta)
EXPERIMENT_PARAMS = {
    "fixed": dict(beta=0.0003665, sigma=0.297397, tau=0.119574),
    "baseline": dict(beta=0.211844, sigma=0.166996, tau=0.303474, k=0.016427, k_hat=0.268257, delta=-0.138640),
    "proposed": dict(beta=0.169103, sigma=0.202815, tau=0.329897, k=0.057800, k_hat=0.399603, delta=-0.209257),
}

#: per-method parameters tuned on the synthetic cloudy preset (training seeds 11-13,
#: disjoint from evaluation seeds); reproduce with scripts/tune_synthetic.py
SYNTHETIC_TUNED = {
    "fixed": dict(beta=0.0154001, sigma=0.791208, tau=6.48148),
    "baseline": dict(beta=0.0117717, sigma=0.710955, tau=22.6778, k=99.132, k_hat=0.264754, delta=-0.307368),
    "proposed": dict(beta=0.0115168, sigma=0.672587, tau=15.565, k=233.112, k_hat=0.339166, delta=-0.42536),
}


class SimulationError(RuntimeError):
    pass


@dataclass
class FieldConfig:
    csv: str = ""
    weather: str = "cloudy"
    seed: int = 1
    steps: int = 0
    n_blobs: int = -1
    q1_min: float = -1.41
    q1_max: float = 2.38
    q2_min: float = -1.26
    q2_max: float = 1.53
    nx: int = 97
    ny: int = 72

    def grid(self) -> MissionGrid:
        return MissionGrid(self.q1_min, self.q1_max, self.q2_min, self.q2_max, self.nx, self.ny)


@dataclass
class AgentConfig:
    n: int = 4
    init: str = "auto"
    positions: list = dc_field(default_factory=list)
    box: list = dc_field(default_factory=lambda: [-0.54, 0.80, -0.54, 0.86])
    dynamics: str = "integrator"
    v_max: float = 1.2
    accel_cap: float = 6.4
    repulsion_radius: float = 0.25
    repulsion_gain: float = 0.02
    kp: float = 0.8
    kw: float = 1.0
    v_lin_max: float = 0.15
    a_lin_max: float = 0.1
    dt_inner: float = 0.1
    n_inner: int = 80


@dataclass
class SimConfig:
    method: str = "proposed"
    L: int = 10
    t0: int = 1
    tT: int = 100
    seed: int = 1
    clamp_predictions: bool = False
    fallback: str = "argmax"
    substeps: int = 1
    snapshot_every: int = 0


@dataclass
class ScenarioConfig:
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    kernel: KernelParams = dc_field(default_factory=KernelParams)
    coverage: CoverageParams = dc_field(default_factory=CoverageParams)
    agents: AgentConfig = dc_field(default_factory=AgentConfig)
    sim: SimConfig = dc_field(default_factory=SimConfig)

    def validate(self, horizon: int | None = None) -> None:
        s, a, f = self.sim, self.agents, self.field
        if s.method not in METHODS:
            raise ValueError(f"sim.method must be one of {METHODS}, got {s.method!r}")
        if a.dynamics not in DYNAMICS:
            raise ValueError(f"agents.dynamics must be one of {DYNAMICS}, got {a.dynamics!r}")
        if a.init not in INITS:
            raise ValueError(f"agents.init must be one of {INITS}, got {a.init!r}")
        if s.fallback not in FALLBACK_MODES:
            raise ValueError(f"sim.fallback must be one of {FALLBACK_MODES}, got {s.fallback!r}")
        if a.n < 1:
            raise ValueError("agents.n must be >= 1")
        if s.L < 1:
            raise ValueError("sim.L must be >= 1")
        if not 0 <= s.t0 < s.tT:
            raise ValueError("need 0 <= sim.t0 < sim.tT")
        if horizon is not None and s.tT > horizon - 1:
            raise ValueError(f"sim.tT={s.tT} exceeds field horizon {horizon} - 1")
        if not f.csv and f.weather not in WEATHER_PRESETS:
            raise ValueError(f"field.weather must be one of {tuple(WEATHER_PRESETS)}")
        if a.v_max <= 0 or a.accel_cap <= 0:
            raise ValueError("agents.v_max and agents.accel_cap must be positive")
        if a.init == "explicit" and len(a.positions) != a.n:
            raise ValueError("agents.positions must list one position per agent")
        if len(a.box) != 4 or not (a.box[0] <= a.box[1] and a.box[2] <= a.box[3]):
            raise ValueError("agents.box must be [q1_lo, q1_hi, q2_lo, q2_hi]")
        if s.substeps < 1 or a.n_inner < 1:
            raise ValueError("sim.substeps and agents.n_inner must be >= 1")
        f.grid()


@dataclass
class RunLog:
    """Per-step results of one scenario.

    Series are indexed by the predicted step ``t`` in ``[t0, tT]``; the
    state columns (positions, branch, H, dissimilarity stats) belong to the
    planning step ``t - 1`` that produced the prediction.
    """

    method: str
    weather: str
    n: int
    seed: int
    t: np.ndarray
    rmse: np.ndarray
    in_window: np.ndarray
    H: np.ndarray
    positions: np.ndarray
    branch: list
    mean_dissimilarity: np.ndarray
    max_dissimilarity: np.ndarray
    E: float
    dphi_max: float
    d2phi_max: float
    snapshots: dict = dc_field(default_factory=dict)


_field_cache: dict = {}


def build_field(cfg: ScenarioConfig) -> FieldSeries:
    f = cfg.field
    grid = f.grid()
    if f.csv:
        return load_field_csv(f.csv, grid)
    steps = f.steps if f.steps > 0 else cfg.sim.tT + 1
    key = (grid, steps, f.seed, f.weather, f.n_blobs)
    fs = _field_cache.get(key)
    if fs is None:
        fs = synth_cloud_field(grid, steps, f.seed, f.weather, None if f.n_blobs < 0 else f.n_blobs)
        if len(_field_cache) > 32:
            _field_cache.clear()
        _field_cache[key] = fs
    return fs


def initial_positions(cfg: ScenarioConfig, grid: MissionGrid, rng) -> np.ndarray:
    a = cfg.agents
    mode = a.init
    if mode == "auto":
        if cfg.sim.method == "fixed":
            mode = "lloyd"
        else:
            mode = "experiment" if a.n == len(EXPERIMENT_INITIAL) else "random"
    if mode == "experiment":
        if a.n != len(EXPERIMENT_INITIAL):
            raise ValueError("experiment initial positions exist for n=4 only")
        pos = np.array(EXPERIMENT_INITIAL, dtype=float)
    elif mode == "lloyd":
        pos = lloyd_placement(grid, a.n, seed=cfg.sim.seed)
    elif mode == "random":
        lo1, hi1, lo2, hi2 = a.box
        pos = np.column_stack([rng.uniform(lo1, hi1, a.n), rng.uniform(lo2, hi2, a.n)])
    else:
        pos = np.asarray(a.positions, dtype=float).reshape(a.n, 2)
    return grid.clamp(pos)


# ---------------------------------------------------------------------------
# agent dynamics


def step_integrator(agent: AgentState, u, v_max: float, accel_cap: float, grid: MissionGrid, dt: float = 1.0) -> AgentState:
    """Single-integrator step with speed and acceleration saturation, clamped to the grid."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    speed = math.hypot(*u)
    if speed > v_max:
        u = u * (v_max / speed)
    du = u - agent.u_prev
    dmag = math.hypot(*du)
    if dmag > accel_cap * dt:
        u = agent.u_prev + du * (accel_cap * dt / dmag)
    return moved(agent, grid.clamp(agent.p + dt * u), u=u)


def _wrap(a: float) -> float:
    if -math.pi < a <= math.pi:
        return a
    w = (a + math.pi) % (2 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def step_unicycle(
    agent: AgentState,
    p_next,
    grid: MissionGrid,
    Kp: float = 0.8,
    Kw: float = 1.0,
    v_max: float = 0.15,
    a_max: float = 0.1,
    dt_inner: float = 0.1,
    n_inner: int = 80,
) -> AgentState:
    """Track ``p_next`` with a unicycle for ``n_inner`` low-level control periods.

    Linear speed is ``Kp`` times the distance to the target (saturated in
    magnitude and rate), angular rate ``Kw`` times the heading error, sign
    flipped when the linear command is not positive. The heading is held
    when the target is reached.
    """
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    p_next = np.asarray(p_next, dtype=float)
    p = agent.p.copy()
    theta = agent.theta
    v_prev = float(agent.u_prev[0])
    for _ in range(n_inner):
        pr = p_next - p
        dist = math.hypot(*pr)
        if dist < 1e-9:
            v, w = 0.0, 0.0
        else:
            theta_r = _wrap(math.atan2(pr[1], pr[0]) - theta)
            v = min(max(Kp * dist, -v_max), v_max)
            w = Kw * theta_r if v > 0 else -Kw * theta_r
        dv = v - v_prev
        lim = a_max * dt_inner
        if abs(dv) > lim:
            v = v_prev + math.copysign(lim, dv)
        p = p + dt_inner * v * np.array([math.cos(theta), math.sin(theta)])
        theta = _wrap(theta + dt_inner * w)
        v_prev = v
    return moved(agent, grid.clamp(p), theta=theta, u=np.array([v_prev, 0.0]))


# ---------------------------------------------------------------------------
# scenario loop


def run_scenario(cfg: ScenarioConfig, fs: FieldSeries | None = None) -> RunLog:
    """Run one closed-loop sampling/prediction scenario.

    Each planning step ``s``: sample the truth at every agent, refit the
    kriging model on the sliding window, predict the whole grid for ``s+1``
    (the dissimilarity of the same fit is the proposed method's importance
    map), move the agents, then update the information map.
    """
    fs = build_field(cfg) if fs is None else fs
    cfg.validate(fs.T)
    grid = fs.grid
    s_cfg, a_cfg, cp, kp = cfg.sim, cfg.agents, cfg.coverage, cfg.kernel
    rng = np.random.default_rng(s_cfg.seed)
    pos0 = initial_positions(cfg, grid, rng)
    agents = [AgentState(i, pos0[i]) for i in range(a_cfg.n)]
    buf = SampleBuffer(s_cfg.L, a_cfg.n)
    info = InformationMap.zeros(grid)
    centers = grid.centers()
    moving = s_cfg.method != "fixed"
    uniform_phi = np.ones(grid.shape)

    t0, tT = s_cfg.t0, s_cfg.tT
    n_log = tT - t0 + 1
    rmse = np.full(n_log, np.nan)
    in_window = np.zeros(n_log, dtype=bool)
    H = np.full(n_log, np.nan)
    positions = np.full((n_log, a_cfg.n, 2), np.nan)
    branch = [[""] * a_cfg.n for _ in range(n_log)]
    mean_d = np.full(n_log, np.nan)
    max_d = np.full(n_log, np.nan)
    snaps: dict = {"dissimilarity": [], "information": []}
    prev_phi = prev2_phi = None
    dphi = d2phi = 0.0

    for s in range(max(0, t0 - s_cfg.L), tT):
        pos = np.array([a.p for a in agents])
        vals = [sample_at(fs, p, s) for p in pos]
        buf.push(s, pos, vals)

        system = KrigingSystem(buf, kp)
        J, pred = system.evaluate(centers, s + 1)
        J = J.reshape(grid.shape)
        pred = pred.reshape(grid.shape)
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(pred))):
            raise SimulationError(f"non-finite kriging output at step {s}")
        phi = J if s_cfg.method == "proposed" else uniform_phi

        k = s + 1 - t0
        logged = k >= 0
        if logged:
            p_eval = np.clip(pred, 0.0, 1.0) if s_cfg.clamp_predictions else pred
            diff = fs.at(s + 1) - p_eval
            rmse[k] = math.sqrt(float(np.mean(diff * diff)))
            in_window[k] = buf.full
            positions[k] = pos
            mean_d[k] = float(J.mean())
            max_d[k] = float(J.max())
            if buf.full:
                if prev_phi is not None:
                    dphi = max(dphi, float(np.max(np.abs(phi - prev_phi))))
                    if prev2_phi is not None:
                        d2phi = max(d2phi, float(np.max(np.abs(phi - 2 * prev_phi + prev2_phi))))
                prev2_phi, prev_phi = prev_phi, phi
            if s_cfg.snapshot_every and k % s_cfg.snapshot_every == 0:
                snaps["dissimilarity"].append((s + 1, J.copy()))

        if not moving:
            continue

        new_agents = []
        for a in agents:
            u, br = control_switched(a, info, phi, cp, rng, s_cfg.fallback)
            u = u + repulsion(a, agents, a_cfg.repulsion_radius, a_cfg.repulsion_gain, a_cfg.v_max, rng)
            if logged:
                branch[k][a.id] = br
            if a_cfg.dynamics == "integrator":
                na = step_integrator(a, u, a_cfg.v_max, a_cfg.accel_cap, grid)
            else:
                na = step_unicycle(
                    a, a.p + u, grid, a_cfg.kp, a_cfg.kw, a_cfg.v_lin_max,
                    a_cfg.a_lin_max, a_cfg.dt_inner, a_cfg.n_inner,
                )
            if not np.all(np.isfinite(na.p)):
                raise SimulationError(f"non-finite agent position at step {s}")
            new_agents.append(na)

        # explicit Euler: sensing at the positions held during step s
        info = info_step(info, agents, cp, substeps=s_cfg.substeps)
        agents = new_agents
        if not np.all(np.isfinite(info.values)):
            raise SimulationError(f"non-finite information map at step {s}")
        if logged:
            H[k] = objective_H(info, phi, cp)
            if s_cfg.snapshot_every and k % s_cfg.snapshot_every == 0:
                snaps["information"].append((s + 1, info.values.copy()))

    t_axis = np.arange(t0, tT + 1)
    if not in_window.any():
        raise SimulationError("no prediction in the evaluation window had a full buffer")
    E = time_avg_error(rmse[in_window])
    return RunLog(
        method=s_cfg.method,
        weather=cfg.field.weather if not cfg.field.csv else Path(cfg.field.csv).stem,
        n=a_cfg.n,
        seed=s_cfg.seed,
        t=t_axis,
        rmse=rmse,
        in_window=in_window,
        H=H,
        positions=positions,
        branch=branch,
        mean_dissimilarity=mean_d,
        max_dissimilarity=max_d,
        E=E,
        dphi_max=dphi,
        d2phi_max=d2phi,
        snapshots=snaps,
    )


# ---------------------------------------------------------------------------
# artifacts


def _g(x) -> str:
    return f"{x:.9g}"


def write_run_artifacts(log: RunLog, out_dir, grid: MissionGrid | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "rmse.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "rmse", "in_window"])
        for t, e, iw in zip(log.t, log.rmse, log.in_window):
            w.writerow([int(t), _g(e), int(iw)])
    with (out / "objective.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "H", "mean_dissimilarity", "max_dissimilarity"])
        for t, h, md, xd in zip(log.t, log.H, log.mean_dissimilarity, log.max_dissimilarity):
            w.writerow([int(t) - 1, _g(h), _g(md), _g(xd)])
    with (out / "trajectories.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent", "q1", "q2", "branch"])
        for k, t in enumerate(log.t):
            for i in range(log.n):
                q1, q2 = log.positions[k, i]
                w.writerow([int(t) - 1, i, _g(q1), _g(q2), log.branch[k][i] or "none"])
    write_summary(out / "summary.csv", [summary_row(log)])
    with (out / "diagnostics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["E", "max_dphi_dt", "max_d2phi_dt2"])
        w.writerow([_g(log.E), _g(log.dphi_max), _g(log.d2phi_max)])
    if grid is not None:
        for name, frames in log.snapshots.items():
            if frames:
                write_block_csv(out / f"{name}_maps.csv", grid, [f for _, f in frames], [t for t, _ in frames])


def summary_row(log: RunLog) -> dict:
    return dict(method=log.method, weather=log.weather, n=log.n, seed=log.seed, E=log.E)


SUMMARY_FIELDS = ("method", "weather", "n", "seed", "E")


def write_summary(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([r["method"], r["weather"], r["n"], r["seed"], _g(r["E"])])


def compare_methods(cfgs, progress=None) -> list[dict]:
    """Run every scenario and return one summary row per run."""
    cfgs = list(cfgs)
    if not cfgs:
        raise ValueError("no scenarios to compare")
    horizons = {(c.sim.t0, c.sim.tT) for c in cfgs}
    if len(horizons) != 1:
        raise ValueError(f"scenarios disagree on the evaluation window: {sorted(horizons)}")
    rows = []
    for c in cfgs:
        log = run_scenario(c)
        rows.append(summary_row(log))
        if progress is not None:
            progress(rows[-1])
    return rows


def format_table(rows) -> str:
    """Aligned text table of median E over seeds, one row per (weather, n), one column per method."""
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    keys = sorted({(r["weather"], r["n"]) for r in rows}, key=lambda x: (x[0], x[1]))
    buf = io.StringIO()
    head = ["weather", "n"] + methods
    body = []
    for wth, n in keys:
        line = [wth, str(n)]
        for m in methods:
            es = [r["E"] for r in rows if r["weather"] == wth and r["n"] == n and r["method"] == m]
            line.append(f"{np.median(es):.4f}" if es else "-")
        body.append(line)
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    buf.write("  ".join(h.ljust(wd) for h, wd in zip(head, widths)).rstrip() + "\n")
    for line in body:
        buf.write("  ".join(x.ljust(wd) for x, wd in zip(line, widths)).rstrip() + "\n")
    return buf.getvalue()
