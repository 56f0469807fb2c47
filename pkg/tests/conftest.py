from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from privsample.fltrain import make_quadratic_task
from privsample.game import GameConfig, solve_game

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def small_cfg():
    return GameConfig(N=12, T=6, seed=3)


@pytest.fixture(scope="session")
def small_sol(small_cfg):
    return solve_game(small_cfg)


@pytest.fixture(scope="session")
def quad_task():
    return make_quadratic_task(N=12, d=4, samples=20, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: int(k)):
        terminalreporter.write_line(lines[key])
