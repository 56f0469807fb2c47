from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privsample.game import (
    GameConfig,
    NonConvergenceError,
    RewardSolverError,
    budget_update,
    client_utility,
    contraction_estimate,
    correction_factor,
    costate_terms,
    mean_field_fixed_point,
    optimal_reward,
    reward_cost_derivative,
    server_cost,
    verify_sne,
)


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("kw", [dict(N=1), dict(T=0), dict(gamma=1.0), dict(gamma=0.0), dict(rho_low=5, rho_high=1),
                                dict(K=0), dict(tau=0.0), dict(varphi=np.full(10, 1.0), N=10)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GameConfig(**kw)


def test_config_defaults():
    c = GameConfig()
    assert (c.N, c.T, c.K, c.gamma, c.rho_low, c.rho_high, c.eps0) == (100, 30, 20, 0.5, 0.01, 12.0, 1e-3)
    assert c.theta.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all((c.varphi > 0) & (c.varphi < 1))


# ---------------------------------------------------------------- single-client ops


def test_budget_update_examples():
    c = GameConfig(N=4, T=2)
    assert budget_update(3.0, 0.7, 3.0, c) == pytest.approx(3.0)
    assert budget_update(5.0, 0.0, 2.0, c) == 2.0
    assert budget_update(5.0, 1 - 1e-9, 2.0, c) == pytest.approx(5.0, rel=1e-8)


@given(st.floats(0.01, 12), st.floats(0, 1 - 1e-6), st.floats(0.01, 12))
def test_budget_update_is_convex_combination(rho, a, phi):
    c = GameConfig(N=4, T=2)
    v = budget_update(rho, a, phi, c)
    assert min(rho, phi) - 1e-12 <= v <= max(rho, phi) + 1e-12


def test_client_utility_pure_privacy_cost():
    N, K, T = 5, 2, 3
    c = GameConfig(N=N, T=T, K=K, varphi=np.full(N, 0.3))
    rho = 2.0
    u = client_utility(c, 1, np.zeros(T + 1), np.full(T + 1, rho), np.zeros(T + 1), np.full(T + 1, rho))
    want = -(T + 1) * (1 - (1 - 1 / N) ** K) * 0.3 * rho**2
    assert u == pytest.approx(want, rel=1e-14)


def test_client_utility_single_sampled_round():
    # round 0 has x = 1 (rho = N phi) so the client is sampled surely; round 1
    # contributes nothing because x = 0 there
    c = GameConfig(N=2, T=1, K=1, varphi=np.full(2, 0.5))
    u = client_utility(c, 0, [0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.5, 0.5])
    assert u == pytest.approx(1.5, abs=1e-15)


def test_client_utility_shape_error():
    c = GameConfig(N=2, T=2)
    with pytest.raises(ValueError):
        client_utility(c, 0, [0, 0], [1, 1, 1], [1, 1, 1], [1, 1, 1])


def test_costate_arithmetic_example():
    # x = rho / (N phi) = 0.25 with N = 4, phi = 1
    c = GameConfig(N=4, T=2, K=2, varphi=np.full(4, 0.5))
    Q, M, S = costate_terms(c, 0, 1.0, 0.0, 1.0, 1.0, form="printed")
    assert Q == pytest.approx(0.8125, abs=1e-15)
    assert M == pytest.approx(-0.8125, abs=1e-15)
    assert S == pytest.approx(0.0, abs=1e-15)
    # the exact form scales the second term of M by K / (N phi) = 0.5
    _, Me, _ = costate_terms(c, 0, 1.0, 0.0, 1.0, 1.0, form="exact")
    assert Me == pytest.approx(-2 * 0.5 * 0.4375 - 0.5 * 0.75 * 0.5, abs=1e-15)


def test_costate_full_sampling_gives_unit_Q():
    c = GameConfig(N=3, T=2, K=3, varphi=np.full(3, 0.5))
    Q, _, _ = costate_terms(c, 0, 6.0, 0.2, 1.0, 2.0)
    assert Q == 1.0


@given(st.floats(1e-3, 1.0))
def test_costate_K1_is_twice_x(x):
    c = GameConfig(N=2, T=1, K=1, varphi=np.full(2, 0.5))
    Q, _, _ = costate_terms(c, 0, 2 * x, 0.0, 1.0, 1.0)
    assert Q == pytest.approx(2 * x, rel=1e-12)


def test_costate_zero_phi_rejected():
    with pytest.raises(ValueError):
        costate_terms(GameConfig(N=2, T=1), 0, 1.0, 0.0, 1.0, 0.0)


def test_correction_factor_cases():
    c = GameConfig(N=4, T=3, K=2, varphi=np.full(4, 0.5))
    assert correction_factor(c, 0, 3, 2.0, 1.0, [], []) == 0.0
    assert correction_factor(c, 0, 1, 2.0, 2.0, [0.3], [1.0, 2.0]) == 0.0
    # hand evaluation: lambda(t+1) = S(t+1) + S(t+2) alpha^{t+1}
    rho, phi, fa, fS = 2.0, 1.0, [0.4], [0.5, 0.25]
    lam = 0.5 + 0.25 * 0.4
    p = 1 - (1 - rho / (4 * phi)) ** 2
    want = (rho - phi) * lam / (2 * 0.5 * p)
    assert correction_factor(c, 0, 1, rho, phi, fa, fS) == pytest.approx(want, rel=1e-14)
    # large numerators clamp to 1 - alpha_clamp
    assert correction_factor(c, 0, 1, rho, phi, fa, [50.0, 0.0]) == c.alpha_max


def test_server_cost_examples():
    assert server_cost(2.0, [1.0], 1, 0.5, [1.0], [1]) == pytest.approx(1.5)
    # gamma -> 1 leaves the accuracy term only
    assert server_cost(7.0, [2.0], 3, 1.0, [1.0], [1]) == pytest.approx(1 / 6)
    with pytest.raises(ValueError):
        server_cost(1.0, [1.0], 0, 0.5, [1.0], [1])


def test_optimal_reward_single_client_closed_form():
    # (1 - gamma) 2 R = gamma / R^2  =>  R^3 = gamma / (2 (1 - gamma))
    R = optimal_reward(1, [1.0], [0.0], 0.5, [1.0], [1])
    assert R == pytest.approx(0.5 ** (1 / 3), rel=1e-10)


def test_optimal_reward_matches_grid_scan():
    G = np.array([0.8, 1.3, 0.4])
    H = np.array([0.05, 0.1, 0.02])
    theta, sizes, gamma, t = np.array([0.2, 0.5, 0.3]), np.array([2.0, 1.0, 3.0]), 0.6, 2
    R = optimal_reward(t, G, H, gamma, theta, sizes)
    assert R > 0.01
    grid = np.linspace(1e-6, 5.0, 1_000_001)
    r = np.outer(grid, G) + H
    c = gamma * theta**2 / (t * sizes**2)
    U = (c / r + (1 - gamma) * grid[:, None] * r).sum(1)
    assert R == pytest.approx(grid[U.argmin()], rel=5e-5)
    # convex at the root: second difference positive
    h = 1e-4 * R
    f = lambda x: server_cost(x, G * x + H, t, gamma, theta, sizes)
    assert f(R + h) - 2 * f(R) + f(R - h) > 0
    assert abs(reward_cost_derivative(R, G, H, c, gamma)) <= 1e-8 * (1 + R)
    assert reward_cost_derivative(R * (1 - 1e-3), G, H, c, gamma) < 0 < reward_cost_derivative(R * (1 + 1e-3), G, H, c, gamma)


def test_optimal_reward_corner_and_errors():
    # huge intercepts make any reward wasteful
    assert optimal_reward(1, [1.0], [50.0], 0.5, [1.0], [1]) == 0.0
    with pytest.raises(ValueError):
        optimal_reward(0, [1.0], [0.0], 0.5, [1.0], [1])
    with pytest.raises(RewardSolverError):
        optimal_reward(1, [-1.0], [-1.0], 0.5, [1.0], [1])


# ---------------------------------------------------------------- solver


def test_homogeneous_fixed_point():
    c = GameConfig(N=8, T=4, varphi=np.full(8, 0.4))
    sol = mean_field_fixed_point(c, rho0=np.full(8, 3.0))
    assert sol.diagnostics["outer_iterations"] == 1
    assert np.all(sol.alphas == 0)
    assert np.allclose(sol.budgets, 3.0, atol=0)
    assert np.allclose(sol.phi, 3.0, atol=0)


def test_solution_invariants(small_sol, small_cfg):
    s, c = small_sol, small_cfg
    T = c.T
    assert np.all((s.budgets >= c.rho_low) & (s.budgets <= c.rho_high))
    assert np.all((s.alphas >= 0) & (s.alphas <= c.alpha_max))
    assert np.all(s.alphas[:, T] == 0)
    assert np.array_equal(s.lam[:, T], s.S[:, T])
    res = s.lam[:, :T] - s.alphas[:, :T] * s.lam[:, 1:] - s.S[:, :T]
    assert np.abs(res).max() <= 1e-10
    assert np.abs(s.budgets.mean(0) - s.phi).max() <= c.eps0
    assert np.allclose(s.distributions.sum(1), 1.0, atol=1e-12)
    assert s.rewards[0] == 0.0 and np.all(s.rewards >= 0)


def test_linear_response_on_unclamped_rounds(small_sol, small_cfg):
    s, c = small_sol, small_cfg
    checked = 0
    for t in range(1, c.T + 1):
        a = s.alphas[:, t - 1]
        free = (a > 1e-9) & (a < c.alpha_max - 1e-9) & (s.budgets[:, t] > c.rho_low) & (s.budgets[:, t] < c.rho_high)
        pred = s.G[free, t] * s.rewards[t] + s.H[free, t]
        assert np.all(np.abs(pred - s.budgets[free, t]) <= 1e-8 * np.abs(s.budgets[free, t]))
        checked += free.sum()
    assert checked > 0


def test_verify_sne_and_negative_control(small_sol):
    rep = verify_sne(small_sol)
    assert rep.worst_client_gain <= 1e-6
    assert rep.worst_server_gain <= 1e-6
    bad = np.minimum(2 * small_sol.alphas + 0.05, small_sol.cfg.alpha_max)
    assert verify_sne(small_sol, alphas=bad).worst_client_gain > 1e-6


def test_solver_reward_optimality(small_sol, small_cfg):
    s, c = small_sol, small_cfg
    for t in range(1, c.T + 1):
        R = s.rewards[t]
        g, h = s.G[:, t], s.budgets[:, t] - s.G[:, t] * R
        w = c.server_weights(s.budgets[:, t], s.phi[t])
        cost = lambda x: float(np.sum(w * (c.cost_weights(t + 1) / (g * x + h) + (1 - c.gamma) * x * (g * x + h))))
        for d in (1e-3, 1e-2, 1e-1):
            for x in (R * (1 + d), R * (1 - d)):
                if np.all(g * x + h > 0):
                    assert cost(R) <= cost(x) * (1 + 1e-12)


def test_nonconvergence_carries_trace():
    c = GameConfig(N=12, T=6, seed=3, max_outer_iters=1, eps0=1e-14)
    with pytest.raises(NonConvergenceError) as e:
        mean_field_fixed_point(c)
    assert len(e.value.residual_trace) >= 1


def test_contraction_estimate_formula():
    v = contraction_estimate(np.array([0.0, 0.5]), 1.0, 3.0)
    assert v == pytest.approx(max(abs(0 - 1.5), abs(0.5 - 0)) / 2)
