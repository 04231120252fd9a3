import numpy as np
import pytest

from kbcover.field import MissionGrid
from kbcover.sim import ScenarioConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return MissionGrid(nx=20, ny=15)


def small_config(method="proposed", seed=1, tT=20, **sim):
    """Cheap scenario on a coarse grid for loop-level tests."""
    cfg = ScenarioConfig()
    cfg.field.nx, cfg.field.ny = 24, 18
    cfg.field.seed = seed
    cfg.sim.method = method
    cfg.sim.seed = seed
    cfg.sim.t0, cfg.sim.tT = 1, tT
    cfg.sim.L = 5
    for k, v in sim.items():
        setattr(cfg.sim, k, v)
    return cfg


@pytest.fixture
def make_config():
    return small_config


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report().splitlines():
        terminalreporter.write_line(line)
