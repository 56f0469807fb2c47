from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privsample.welfare import (
    optimal_social_welfare,
    poa,
    privacy_nash_welfare,
    privacy_poa_upper_bound,
    random_nash_welfare,
    random_poa_lower_bound,
    social_welfare,
    socially_optimal_budget,
    welfare_report,
)

rewards_st = st.lists(st.floats(0.01, 50.0), min_size=1, max_size=10)
phis_st = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=10)


def test_social_welfare_examples():
    assert social_welfare(np.zeros((3, 2)), [1.0, 2.0], [0.5, 0.5, 0.5]) == 0.0
    assert social_welfare([[1.0]], [2.0], [0.5]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        social_welfare(np.ones((2, 3)), [1.0, 1.0], [0.5, 0.5])


def test_socially_optimal_budget_examples():
    assert socially_optimal_budget(1.0, 0.5).value == 1.0
    assert socially_optimal_budget(2.0, 0.25).value == 4.0
    b = socially_optimal_budget(30.0, 0.5, 0.01, 12.0)
    assert (b.value, b.clamped) == (30.0, 12.0)


def test_optimal_welfare_examples():
    assert optimal_social_welfare([2.0], [0.5, 1.0]) == pytest.approx(3.0)


@given(rewards_st, phis_st)
def test_optimal_welfare_equals_welfare_at_optimum(R, phi):
    R, phi = np.array(R), np.array(phi)
    b = R[None, :] / (2 * phi[:, None])
    assert social_welfare(b, R, phi) == pytest.approx(optimal_social_welfare(R, phi), rel=1e-10)
    assert optimal_social_welfare(2 * R, phi) == pytest.approx(4 * optimal_social_welfare(R, phi), rel=1e-12)
    # local maximum: every +-10% perturbation of one budget lowers welfare
    for s in (0.9, 1.1):
        bb = b.copy()
        bb[0, 0] *= s
        assert social_welfare(bb, R, phi) < social_welfare(b, R, phi)


def test_poa_examples():
    assert poa(3.0, 1.5) == 2.0
    assert poa(4.2, 4.2) == 1.0
    assert poa(1.0, 0.0) == float("inf")
    assert poa(1.0, -2.0) == float("inf")


def test_random_nash_examples():
    assert random_nash_welfare([1.0], [0.5, 0.5], 0.1, 2, 0) == pytest.approx(0.19)
    assert abs(random_nash_welfare([3.0, 2.0], [0.5, 0.2], 1e-12, 2, 1)) < 1e-10
    # matches social_welfare at the all-rho_low profile
    R, phi = np.array([0.0, 2.0, 1.0]), np.array([0.3, 0.6])
    assert random_nash_welfare(R, phi, 0.05, 2, 2) == pytest.approx(social_welfare(np.full((2, 3), 0.05), R, phi))
    assert privacy_nash_welfare(R, phi, 4.0, 2, 2) == pytest.approx(social_welfare(np.full((2, 3), 4.0), R, phi))


@given(rewards_st, phis_st, st.floats(1e-3, 0.05))
def test_random_poa_meets_lower_bound(R, phi, rho_low):
    R, phi = np.array(R), np.array(phi)
    N, T = phi.size, R.size - 1
    nash = random_nash_welfare(R, phi, rho_low, N, T)
    lb = random_poa_lower_bound(R, phi, rho_low, N, T)
    if nash > 0:
        assert poa(optimal_social_welfare(R, phi), nash) >= lb * (1 - 1e-12)
    # halving rho_low doubles the bound exactly
    assert random_poa_lower_bound(R, phi, rho_low / 2, N, T) == pytest.approx(2 * lb, rel=1e-15)


def test_privacy_bound_limit_example():
    b = privacy_poa_upper_bound(1.0, 10, np.full(10, 0.5), 1e300, np.ones(3), 2)
    assert b.limit == pytest.approx(1.0)
    assert b.value == pytest.approx(1.0)


def test_privacy_bound_decreases_in_rho_high():
    phi, R = np.full(10, 0.5), np.ones(3)
    vals = [privacy_poa_upper_bound(1.0, 10, phi, h, R, 2).value for h in np.geomspace(1.0, 1e4, 30)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_privacy_bound_inapplicable_flags():
    # tiny rho_high drives the denominator negative
    b = privacy_poa_upper_bound(1.0, 2, np.full(2, 0.9), 0.01, np.ones(2), 1)
    assert not b.denominator_positive and not b.applicable and b.value == float("inf")


@given(rewards_st)
def test_cauchy_schwarz_step(R):
    R = np.array(R)
    assert np.sum(R**2) / np.sum(R) <= R.max() * (1 + 1e-12)


def test_report_on_solved_game(small_sol):
    c = small_sol.cfg
    rep = welfare_report(small_sol.budgets, small_sol.rewards, c.varphi, c.rho_low, c.rho_high)
    assert rep.sw_opt >= rep.sw_nash
    assert rep.r_max == small_sol.rewards.max()
    if rep.sw_nash > 0:
        assert rep.poa >= 1
    if rep.pri_bound_applicable:
        assert rep.poa_privacy_worst <= rep.pri_upper_bound
    d = rep.to_dict()
    assert set(d) >= {"sw_opt", "sw_nash", "poa", "rand_lower_bound", "pri_upper_bound", "r_max"}
