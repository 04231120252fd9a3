import numpy as np
import pytest

from kbcover.coverage import (
    AgentState,
    CoverageParams,
    InformationMap,
    control_fallback,
    control_primary,
    control_switched,
    fallback_target,
    info_step,
    lloyd_placement,
    measurement,
    measurement_deriv,
    measurement_field,
    measurement_map,
    objective_H,
    penalty,
    penalty_deriv,
    repulsion,
    voronoi_centroids,
)
from kbcover.field import MissionGrid

CP = CoverageParams(C=0.3, r=0.5)


def test_params_validation():
    for bad in (dict(C=0), dict(r=-1), dict(delta=0.1), dict(k=0), dict(k_hat=-1), dict(I_ref=0)):
        with pytest.raises(ValueError):
            CoverageParams(**bad)


def test_agent_heading_wrapped():
    assert AgentState(0, (0, 0), theta=3 * np.pi).theta == pytest.approx(np.pi)
    assert AgentState(0, (0, 0), theta=-np.pi).theta == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        AgentState(0, (np.nan, 0))


def test_measurement_values():
    assert measurement(0.0, CP) == pytest.approx(0.3)
    assert measurement(0.25, CP) == 0.0
    assert measurement(0.125, CP) == pytest.approx(0.075)
    assert measurement(1.0, CP) == 0.0
    assert abs(measurement(0.25 - 1e-4 * 0.25, CP)) < 1e-6
    s = np.linspace(0, 0.3, 31)
    h = 1e-7
    num = (measurement(s + h, CP) - measurement(s - h, CP)) / (2 * h)
    inside = s < 0.25 - 1e-6
    assert np.allclose(measurement_deriv(s, CP)[inside], num[inside], atol=1e-5)
    assert np.all(measurement_deriv(s, CP) <= 0)


def test_measurement_map():
    q = np.array([0.3, -0.2])
    assert measurement_map([], q, CP) == 0.0
    assert measurement_map([AgentState(0, q), AgentState(1, q)], q, CP) == pytest.approx(0.6)
    assert measurement_map([AgentState(0, q + [0.25, 0])], q, CP) == pytest.approx(9 / 16 * 0.3)


def test_measurement_field_matches_pointwise(small_grid, rng):
    agents = [AgentState(i, rng.uniform(-1, 1, 2)) for i in range(3)]
    M = measurement_field(small_grid, agents, CP).reshape(-1)
    c = small_grid.centers()
    for idx in rng.integers(0, small_grid.size, 25):
        assert M[idx] == pytest.approx(measurement_map(agents, c[idx], CP), abs=1e-14)


def test_info_step_examples(small_grid):
    I = InformationMap(small_grid, np.full(small_grid.shape, 0.7))
    assert np.array_equal(info_step(I, [], CoverageParams(delta=0.0)).values, I.values)
    one = InformationMap(small_grid, np.ones(small_grid.shape))
    assert np.allclose(info_step(one, [], CoverageParams(delta=-0.139)).values, 0.861)
    with pytest.raises(ValueError):
        info_step(I, [], CP, dt=0)


def test_info_equilibrium():
    # a single cell under a coincident agent receives M = C; equilibrium is -C / delta
    g = MissionGrid(0.0, 0.01, 0.0, 0.01, 1, 1)
    cp = CoverageParams(C=0.1, delta=-0.2)
    I = InformationMap.zeros(g)
    a = [AgentState(0, (0.005, 0.005))]
    for _ in range(300):
        I = info_step(I, a, cp)
    assert I.values[0, 0] == pytest.approx(0.5, abs=1e-9)
    sub = info_step(InformationMap.zeros(g), a, cp, substeps=4)
    assert sub.values[0, 0] < 0.1 and sub.values[0, 0] > 0


def test_info_monotone_decay_and_floor(small_grid):
    I = InformationMap(small_grid, np.linspace(0, 1, small_grid.size).reshape(small_grid.shape))
    cp = CoverageParams(delta=-0.3)
    prev = I.values
    for _ in range(20):
        I = info_step(I, [], cp)
        pos = prev > 0
        assert np.all(I.values[pos] < prev[pos]) and np.all(I.values >= 0)
        prev = I.values
    assert np.all(info_step(I, [], CoverageParams(delta=-2.0)).values == 0.0)


def test_penalty():
    assert penalty(-1.0) == 0.0 and penalty_deriv(-1.0) == 0.0
    assert penalty(0.0) == 0.0 and penalty_deriv(0.0) == 0.0
    assert penalty(0.5) == 0.25 and penalty_deriv(0.5) == 1.0


def test_objective_H():
    g = MissionGrid(0.0, 1.0, 0.0, 1.0, 10, 10)
    assert objective_H(InformationMap.zeros(g), None, CP) == pytest.approx(1.0)
    assert objective_H(InformationMap(g, np.ones(g.shape)), None, CP) == 0.0
    assert objective_H(InformationMap.zeros(g), np.zeros(g.shape), CP) == 0.0
    with pytest.raises(ValueError):
        objective_H(InformationMap.zeros(g), np.zeros((3, 3)), CP)


def _one_unsatisfied_east(g, p):
    I = np.full(g.shape, 2.0)
    c = g.centers()
    d = c - p
    # the cell nearest to p + (0.25, 0)
    idx = int(np.argmin(np.hypot(d[:, 0] - 0.25, d[:, 1])))
    I.reshape(-1)[idx] = 0.0
    return InformationMap(g, I), c[idx]


def test_primary_points_toward_deficit():
    g = MissionGrid(-1.0, 1.0, -1.0, 1.0, 81, 81)
    p = np.array([0.0, 0.0])
    I, target = _one_unsatisfied_east(g, p)
    u = control_primary(AgentState(0, p), I, None, CP)
    assert u[0] > 0 and abs(u[1]) <= 1e-12 + abs(u[0]) * abs(target[1] / target[0])
    assert np.all(control_primary(AgentState(0, p), I, np.zeros(g.shape), CP) == 0.0)


def test_primary_zero_when_satisfied(small_grid, rng):
    I = InformationMap(small_grid, rng.uniform(1.0, 2.0, small_grid.shape))
    u = control_primary(AgentState(0, (0.1, 0.1)), I, rng.uniform(size=small_grid.shape), CP)
    assert u.tolist() == [0.0, 0.0]


def test_primary_quadrature_converges():
    p = np.array([0.13, -0.07])
    cp = CoverageParams(k=1.0)

    def u_at(n):
        g = MissionGrid(-1.0, 1.0, -1.0, 1.0, n, n)
        c = g.centers()
        I = (0.5 + 0.4 * np.sin(2 * c[:, 0]) * np.cos(3 * c[:, 1])).reshape(g.shape)
        phi = (1.0 + 0.5 * c[:, 0]).reshape(g.shape)
        return control_primary(AgentState(0, p), InformationMap(g, I), phi, cp)

    a, b = u_at(100), u_at(200)
    assert np.linalg.norm(a - b) < 0.05 * np.linalg.norm(b)


def test_fallback_examples(small_grid):
    cp = CoverageParams(k_hat=0.4)
    g = MissionGrid(-1.0, 1.0, -1.0, 1.0, 40, 40)
    c = g.centers()
    phi = np.zeros(g.size)
    idx = int(np.argmin(np.hypot(c[:, 0] - 0.3, c[:, 1] - 0.1)))
    phi[idx] = 1.0
    a = AgentState(0, (0.0, 0.0))
    for k_hat in (0.1, 0.9):
        t = fallback_target(a, phi.reshape(g.shape), g, CoverageParams(k_hat=k_hat))
        assert np.array_equal(t, c[idx])
    u = control_fallback(a, phi.reshape(g.shape), g, cp)
    assert np.allclose(u, 0.4 * c[idx])
    # linear law itself: target (0.5, 0) from the origin
    at = AgentState(0, (0.0, 0.0))
    assert np.allclose(-cp.k_hat * (at.p - np.array([0.5, 0.0])), [0.2, 0.0])


def test_fallback_tie_break_and_uniform(rng):
    g = MissionGrid(-1.0, 1.0, -1.0, 1.0, 20, 20)
    a = AgentState(0, (0.05, 0.05))
    phi = np.ones(g.shape)
    t1 = fallback_target(a, phi, g, CP, np.random.default_rng(3))
    t2 = fallback_target(a, phi, g, CP, np.random.default_rng(3))
    assert np.array_equal(t1, t2)
    assert np.hypot(*(t1 - a.p)) <= CP.r
    # two maxima: the farther one wins
    c = g.centers()
    d = np.hypot(*(c - a.p).T)
    inside = np.flatnonzero(d < CP.r - 1e-9)
    near, far = inside[np.argmin(d[inside])], inside[np.argmax(d[inside])]
    phi2 = np.zeros(g.size)
    phi2[[near, far]] = 1.0
    assert np.array_equal(fallback_target(a, phi2.reshape(g.shape), g, CP), c[far])
    fc = fallback_target(a, phi2.reshape(g.shape), g, CP, mode="fixed-center")
    assert np.array_equal(fc, c[near])
    with pytest.raises(ValueError):
        fallback_target(a, phi, g, CP, mode="nearest")


def test_switch_consistency(small_grid, rng):
    for _ in range(50):
        I = InformationMap(small_grid, rng.uniform(0.5, 1.5, small_grid.shape) * (rng.uniform() < 0.5) + rng.uniform() * 1.2)
        phi = rng.uniform(size=small_grid.shape)
        a = AgentState(0, rng.uniform(-1, 1, 2))
        u, br = control_switched(a, I, phi, CP, np.random.default_rng(0))
        if br == "primary":
            assert np.array_equal(u, control_primary(a, I, phi, CP))
        else:
            assert np.array_equal(u, control_fallback(a, phi, small_grid, CP, np.random.default_rng(0)))
    u, br = control_switched(AgentState(0, (0, 0)), InformationMap.zeros(small_grid), None, CP)
    assert br == "primary"


def test_lloyd_single_site_and_fixed_point():
    g = MissionGrid()
    one = lloyd_placement(g, 1)
    assert np.allclose(one[0], [(g.q1_min + g.q1_max) / 2, (g.q2_min + g.q2_max) / 2], atol=1e-9)
    sites = lloyd_placement(g, 5, seed=2)
    assert np.allclose(voronoi_centroids(g, sites), sites, atol=1e-5)
    assert np.array_equal(sites, lloyd_placement(g, 5, seed=2))
    with pytest.raises(ValueError):
        lloyd_placement(g, 0)


def test_repulsion():
    a = AgentState(0, (0.0, 0.0))
    R, gain = 0.4, 0.05
    assert repulsion(a, [a, AgentState(1, (1.0, 0.0))], R, gain, 1.0).tolist() == [0.0, 0.0]
    assert np.allclose(repulsion(a, [AgentState(1, (R, 0.0))], R, gain, 1.0), 0.0)
    u = repulsion(a, [AgentState(1, (-R / 2, 0.0))], R, gain, 1.0)
    assert np.allclose(u, [gain / R, 0.0])
    capped = repulsion(a, [AgentState(1, (-1e-6, 0.0))], R, gain, 0.3)
    assert np.hypot(*capped) == pytest.approx(0.3)
    same = repulsion(a, [AgentState(1, (0.0, 0.0))], R, gain, 0.3, np.random.default_rng(1))
    assert np.hypot(*same) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        repulsion(a, [], 0.0, gain, 1.0)
