"""Acceptance suite: twelve criteria, one PASS/FAIL line each.

Run with pytest (the lines are printed in the terminal summary) or directly:

    python3 tests/test_acceptance.py
"""

import io
import itertools
import math
import time
import warnings
from functools import lru_cache

import numpy as np
import pytest

from kbcover.coverage import AgentState, CoverageParams, InformationMap, control_primary, control_switched, lloyd_placement
from kbcover.field import FieldSeries, MissionGrid
from kbcover.kriging import KernelParams, OneStepAheadWarning, SampleBuffer, dissimilarity_general, gram, predict, solve_qp
from kbcover.sim import SYNTHETIC_TUNED, ScenarioConfig, compare_methods, run_scenario, write_summary

RESULTS: dict = {}

SEEDS = (1, 2, 3, 4, 5)
WEATHERS = ("standard", "sunny", "cloudy", "very_cloudy")
EXPERIMENT_FIXED = np.array([(1.42, 0.84), (1.45, -0.57), (-0.45, -0.57), (-0.48, 0.84)])


def record(num, name, passed, detail):
    RESULTS[num] = (name, bool(passed), detail)
    return passed


def tuned_config(method, seed=1, weather="cloudy", n=4, t0=1, tT=100, init="auto"):
    """Default experiment settings with the per-method parameters tuned on held-out seeds."""
    cfg = ScenarioConfig()
    cfg.field.weather = weather
    cfg.field.seed = seed
    cfg.sim.method = method
    cfg.sim.seed = seed
    cfg.sim.t0, cfg.sim.tT = t0, tT
    cfg.agents.n = n
    cfg.agents.init = init
    p = SYNTHETIC_TUNED[method]
    cfg.kernel = KernelParams(p["sigma"], p["tau"], p["beta"])
    if method != "fixed":
        cfg.coverage = CoverageParams(k=p["k"], k_hat=p["k_hat"], delta=p["delta"])
    return cfg


@lru_cache(maxsize=None)
def run_E(method, seed, weather="cloudy", n=4, init="auto"):
    return run_scenario(tuned_config(method, seed, weather, n, init=init)).E


def median_E(method, weather="cloudy", n=4, init="auto"):
    return float(np.median([run_E(method, s, weather, n, init) for s in SEEDS]))


# --- oracles -------------------------------------------------------------------------------


def hyperplane_search(A, k, step0=1.0, step_min=1e-7):
    """Compass search for min l^T A l - 2 k^T l + 1 on the plane 1^T l = 1, independent of any KKT solve."""
    N = len(k)
    if N == 1:
        return 1.0 - 2.0 * k[0] + A[0, 0], np.ones(1)
    # orthonormal basis of the plane's direction space
    Q, _ = np.linalg.qr(np.column_stack([np.ones(N), np.eye(N)[:, : N - 1]]))
    B = Q[:, 1:]
    dirs = np.hstack([B, -B, (B[:, :, None] + B[:, None, :]).reshape(N, -1) / math.sqrt(2)])
    dirs = np.hstack([dirs, -dirs])

    def f(lam):
        return float(lam @ A @ lam - 2.0 * k @ lam + 1.0)

    lam = np.full(N, 1.0 / N)
    fl = f(lam)
    step = step0
    while step >= step_min:
        cand = lam[:, None] + step * dirs
        vals = np.einsum("in,ij,jn->n", cand, A, cand) - 2.0 * k @ cand + 1.0
        j = int(np.argmin(vals))
        if vals[j] < fl:
            lam, fl = cand[:, j], float(vals[j])
        else:
            step *= 0.5
    return fl, lam


def random_space_time(rng, N, steps=10):
    return np.column_stack([rng.uniform(-1.41, 2.38, N), rng.uniform(-1.26, 1.53, N), rng.integers(0, steps, N).astype(float)])


# --- criteria --------------------------------------------------------------------------------


def test_01_qp_oracle():
    rng = np.random.default_rng(101)
    t = time.perf_counter()
    worst_J = worst_l = 0.0
    for _ in range(200):
        N = int(rng.integers(1, 6))
        kp = KernelParams(rng.uniform(0.1, 1.5), rng.uniform(0.2, 5.0), 10 ** rng.uniform(-2, 0))
        Z = random_space_time(rng, N, steps=3)
        z = np.array([rng.uniform(-1.41, 2.38), rng.uniform(-1.26, 1.53), 3.0])
        K = gram(Z, kp)
        k = np.exp(-((Z[:, 0] - z[0]) ** 2 + (Z[:, 1] - z[1]) ** 2) / (2 * kp.sigma**2) - (Z[:, 2] - z[2]) ** 2 / (2 * kp.tau**2))
        sol = solve_qp(K, k, kp.beta)
        J_bf, lam_bf = hyperplane_search(K + kp.beta * np.eye(N), k)
        worst_J = max(worst_J, abs(sol.J - J_bf))
        worst_l = max(worst_l, float(np.linalg.norm(sol.lam - lam_bf)))
    dt = time.perf_counter() - t
    ok = worst_J <= 1e-5 and worst_l <= 1e-3 and dt < 10
    record(1, "QP oracle equivalence", ok, f"max|dJ|={worst_J:.1e} max|dlam|={worst_l:.1e} time={dt:.1f}s")
    assert ok


def test_02_interpolation_exactness():
    rng = np.random.default_rng(202)
    worst_J = worst_y = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 41))
        Z = random_space_time(rng, N, steps=10)
        Y = rng.uniform(0, 1, N)
        buf = SampleBuffer.from_arrays(Z, Y)
        kp = KernelParams(rng.uniform(0.05, 1.0), rng.uniform(0.1, 5.0), 0.0)
        j = int(rng.integers(N))
        # querying at a buffered time is intended here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OneStepAheadWarning)
            val, J = predict(Z[j, :2], Z[j, 2], buf, kp)
        worst_J = max(worst_J, J)
        worst_y = max(worst_y, abs(val - Y[j]))
    ok = worst_J <= 1e-8 and worst_y <= 1e-8
    record(2, "Interpolation exactness", ok, f"max J={worst_J:.1e} max|dCF|={worst_y:.1e}")
    assert ok


def test_03_constant_field_exactness():
    worst = 0.0
    for method, c in itertools.product(("fixed", "baseline", "proposed"), (0.0, 0.4, 1.0)):
        cfg = tuned_config(method, seed=3, tT=30)
        g = cfg.field.grid()
        log = run_scenario(cfg, FieldSeries(g, np.full((31, *g.shape), c)))
        worst = max(worst, float(np.max(log.rmse[log.in_window])))
    ok = worst <= 1e-9
    record(3, "Constant-field exactness", ok, f"max in-window RMSE={worst:.1e}")
    assert ok


def test_04_gram_psd():
    rng = np.random.default_rng(404)
    worst = math.inf
    for _ in range(100):
        N = int(rng.integers(1, 41))
        kp = KernelParams(rng.uniform(0.05, 2.0), rng.uniform(0.05, 10.0), 0.0)
        worst = min(worst, float(np.linalg.eigvalsh(gram(random_space_time(rng, N), kp)).min()))
    ok = worst >= -1e-8
    record(4, "Gram PSD", ok, f"min eigenvalue={worst:.2e}")
    assert ok


def test_05_affine_invariance():
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(20):
        nd, N = int(rng.integers(1, 4)), int(rng.integers(4, 9))
        D = rng.normal(size=(nd, N))
        # random affine combination of the columns, so the query is feasible
        w = rng.normal(size=N)
        d = D @ (w - w.mean() + 1.0 / N)
        J0, _ = dissimilarity_general(d, D)
        while True:
            A = rng.normal(size=(nd, nd))
            if abs(np.linalg.det(A)) > 0.1:
                break
        b = rng.normal(size=nd)
        J1, _ = dissimilarity_general(A @ d + b, A @ D + b[:, None])
        worst = max(worst, abs(J1 - J0))
    ok = worst <= 1e-8
    record(5, "Affine invariance (gamma=0, w=1)", ok, f"max|dJ|={worst:.1e}")
    assert ok


def test_06_lloyd_fixed_sites():
    t = time.perf_counter()
    sites = lloyd_placement(MissionGrid(), 4, seed=0)
    dt = time.perf_counter() - t
    best = min(
        float(np.max(np.linalg.norm(sites[list(perm)] - EXPERIMENT_FIXED, axis=1)))
        for perm in itertools.permutations(range(4))
    )
    ok = best <= 0.05 and dt < 5
    record(6, "Lloyd reproduction of fixed sensors", ok, f"max offset={best:.3f} m time={dt:.2f}s")
    assert ok


def test_07_zero_input_condition():
    rng = np.random.default_rng(707)
    g = MissionGrid()
    c = g.centers()
    bad = 0
    for _ in range(1000):
        cp = CoverageParams(C=rng.uniform(0.05, 1), r=rng.uniform(0.1, 0.8), k=10 ** rng.uniform(-3, 2), I_ref=rng.uniform(0.5, 2))
        p = rng.uniform([g.q1_min, g.q2_min], [g.q1_max, g.q2_max])
        I = rng.uniform(0, 2 * cp.I_ref, g.size)
        inside = np.hypot(c[:, 0] - p[0], c[:, 1] - p[1]) <= cp.r
        I[inside] = cp.I_ref + rng.uniform(0, 1, inside.sum()) * rng.integers(0, 2, inside.sum())
        info = InformationMap(g, I.reshape(g.shape))
        phi = rng.uniform(0, 2, g.shape)
        agent = AgentState(0, p)
        u = control_primary(agent, info, phi, cp)
        _, branch = control_switched(agent, info, phi, cp, rng)
        if not (u[0] == 0.0 and u[1] == 0.0 and branch == "fallback"):
            bad += 1
    ok = bad == 0
    record(7, "Controller zero-input condition", ok, f"violations={bad}/1000")
    assert ok


def test_08_boundedness():
    k = SYNTHETIC_TUNED["proposed"]["k"]
    lines, ok = [], True
    for seed in SEEDS:
        log = run_scenario(tuned_config("proposed", seed, t0=1, tT=500))
        H = log.H
        first, second = np.max(H[(log.t >= 1) & (log.t <= 250)]), np.max(H[log.t > 250])
        good = bool(np.all(np.isfinite(H)) and second <= first and log.dphi_max < k / 10 and log.d2phi_max < k / 10)
        ok &= good
        lines.append(f"s{seed}:H2/H1={second / first:.2f},dphi={log.dphi_max:.2g},d2phi={log.d2phi_max:.2g}")
    record(8, "Boundedness and slow importance map", ok, f"k/10={k / 10:.3g} " + " ".join(lines))
    assert ok


@pytest.mark.slow
def test_09_method_ordering():
    t = time.perf_counter()
    m = {meth: median_E(meth) for meth in ("fixed", "baseline", "proposed")}
    dt = time.perf_counter() - t
    ok = m["proposed"] < m["baseline"] < m["fixed"] and dt < 600
    record(9, "Method ordering (cloudy)", ok, " ".join(f"{k}={v:.4f}" for k, v in m.items()) + f" time={dt:.0f}s")
    assert ok


@pytest.mark.slow
def test_10_weather_robustness():
    cells = {w: (median_E("baseline", w), median_E("proposed", w)) for w in WEATHERS}
    ok = all(p <= b for b, p in cells.values())
    record(10, "Weather robustness", ok, " ".join(f"{w}:B={b:.4f}/P={p:.4f}" for w, (b, p) in cells.items()))
    assert ok


def _non_increasing(es, rel=0.05):
    inversions = [(a, b) for a, b in zip(es, es[1:]) if b > a]
    return len(inversions) == 0 or (len(inversions) == 1 and inversions[0][1] <= inversions[0][0] * (1 + rel))


@pytest.mark.slow
def test_11_n_sweep():
    # only n varies: every n starts from the same seeded random-in-box rule
    # (the auto rule gives n=4 alone the hand-placed layout)
    ns = (3, 4, 5, 6)
    curves = {meth: [median_E(meth, "cloudy", n, "random") for n in ns] for meth in ("baseline", "proposed")}
    auto = {meth: [median_E(meth, "cloudy", n) for n in ns] for meth in ("baseline", "proposed")}
    ok = all(_non_increasing(es) for es in curves.values())
    fmt = lambda cs: " ".join(f"{k}:" + ",".join(f"{e:.4f}" for e in es) for k, es in cs.items())
    record(11, "n-sweep trend", ok, f"{fmt(curves)} (auto init, not asserted: {fmt(auto)})")
    assert ok


def test_12_determinism(tmp_path):
    cfgs = [tuned_config(m, seed=2, tT=40) for m in ("fixed", "baseline", "proposed")]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_summary(a, compare_methods(cfgs))
    write_summary(b, compare_methods([tuned_config(m, seed=2, tT=40) for m in ("fixed", "baseline", "proposed")]))
    ok = a.read_bytes() == b.read_bytes()
    record(12, "Determinism of summary.csv", ok, "identical" if ok else "differs")
    assert ok


def report() -> str:
    out = io.StringIO()
    for num in sorted(RESULTS):
        name, passed, detail = RESULTS[num]
        out.write(f"[{'PASS' if passed else 'FAIL'}] {num:2d}. {name}: {detail}\n")
    return out.getvalue()


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for fn in [v for k, v in sorted(globals().items()) if k.startswith("test_")]:
        try:
            if fn is test_12_determinism:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            pass
    print(report(), end="")
