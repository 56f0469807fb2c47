from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privsample.fltrain import (
    FLRunRecord,
    SyntheticTask,
    accuracy_loss_metric,
    aggregate,
    local_sgd,
    make_logistic_task,
    make_quadratic_task,
    run_fedpcs,
    run_fl,
)
from privsample.sampling import WITH_REPLACEMENT, WITHOUT_REPLACEMENT


def _fd_grad(f, w, h=1e-6):
    g = np.zeros_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("maker", [lambda: make_quadratic_task(N=4, d=3, samples=15, seed=5),
                                   lambda: make_logistic_task(N=4, d=3, samples=15, seed=5)])
def test_gradients_match_finite_differences(maker):
    task = maker()
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.normal(size=task.d)
        for i in range(task.N):
            g = task.local_grad(i, w)
            fd = _fd_grad(lambda v: task.local_loss(i, v), w)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))
        assert np.linalg.norm(task.grad(w) - _fd_grad(task.loss, w)) <= 1e-5 * max(1.0, np.linalg.norm(task.grad(w)))


def test_quadratic_constants_and_optimum():
    task = make_quadratic_task(N=6, d=4, seed=2)
    assert np.linalg.norm(task.grad(task.w_star)) <= 1e-10
    H = sum(task.theta[i] * task.local_hessian(i) for i in range(task.N))
    ev = np.linalg.eigvalsh(H)
    assert task.psi == pytest.approx(ev[0], rel=1e-10)
    assert task.mu == task.psi
    assert task.beta >= ev[-1] - 1e-12
    assert task.loss(task.w_star) == pytest.approx(task.F_star)


def test_logistic_optimum_is_stationary():
    task = make_logistic_task(N=5, d=3, samples=30, reg=0.05, seed=1)
    assert np.linalg.norm(task.grad(task.w_star)) <= 1e-8
    assert task.psi == pytest.approx(0.05)


def test_local_sgd_cases():
    # F(w) = 1/2 ||w - c||^2: a single client with identity features
    X = [np.eye(3) * np.sqrt(3)]
    c = np.array([1.0, -2.0, 0.5])
    y = [X[0] @ c]
    task = SyntheticTask("quadratic", X, y, 0.0, np.array([1.0]), c, 0.0, 3.0, 3.0, True)
    assert np.allclose(local_sgd(task, 0, c, 0.1), 0.0)
    two = make_quadratic_task(N=2, d=3, samples=10, seed=0)
    twin = SyntheticTask("quadratic", [two.X[0], two.X[0]], [two.y[0], two.y[0]], two.reg, two.theta,
                         two.w_star, two.F_star, two.beta, two.psi, False)
    w = np.array([0.3, 0.1, -0.2])
    assert np.array_equal(local_sgd(twin, 0, w, 0.1), local_sgd(twin, 1, w, 0.1))
    with pytest.raises(ValueError):
        local_sgd(twin, 0, w, 0.0)
    empty = SyntheticTask("quadratic", [np.zeros((0, 3))], [np.zeros(0)], 0.0, np.array([1.0]), w, 0.0, 1.0, 1.0, True)
    with pytest.raises(ValueError):
        local_sgd(empty, 0, w, 0.1)


def test_multi_epoch_pseudo_gradient():
    task = make_quadratic_task(N=2, d=3, seed=0)
    w = np.zeros(3)
    lr = 0.05
    g = local_sgd(task, 0, w, lr, epochs=2)
    w1 = w - lr * task.local_grad(0, w)
    w2 = w1 - lr * task.local_grad(0, w1)
    assert np.allclose(g, (w - w2) / lr, rtol=1e-12)


def test_aggregate_cases():
    w = np.array([1.0, 2.0])
    grads = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    assert np.array_equal(aggregate(w, np.zeros((3, 2)), np.ones(3), 0.5), w)
    # K = N, uniform x, theta = 1/N: plain average
    assert np.allclose(aggregate(w, grads, np.full(3, 1 / 3), 0.3), w - 0.3 * grads.mean(0))


def test_accuracy_metric_examples():
    assert accuracy_loss_metric([1.0], [1.0], [1], 1) == 1.0
    b, th, n = np.array([1.0, 3.0]), np.array([0.4, 0.6]), np.array([2, 5])
    assert accuracy_loss_metric(2 * b, th, n, 3) == pytest.approx(accuracy_loss_metric(b, th, n, 3) / 2)
    with pytest.raises(ValueError):
        accuracy_loss_metric(b, th, n, 0)


def test_zero_noise_full_participation_is_gradient_descent():
    task = make_quadratic_task(N=5, d=3, seed=4)
    T, lr = 15, 0.05
    budgets = np.full((5, T + 1), 12.0)
    rec = run_fl(task, budgets, np.full(5, 0.2), 5, lr, seed=0, clip=1e-12, clip_params=False, keep_models=True)
    w = np.zeros(3)
    for t in range(T):
        w = w - lr * task.grad(w)
        assert np.allclose(rec.models[t + 1], w, atol=1e-10, rtol=0)


def test_run_is_deterministic_and_shaped(small_sol):
    task = make_quadratic_task(N=small_sol.cfg.N, seed=1)
    a = run_fedpcs(small_sol, task, seed=3, lr=0.1)
    b = run_fedpcs(small_sol, task, seed=3, lr=0.1)
    assert a.csv_rows() == b.csv_rows()
    assert a.to_dict() == b.to_dict()
    T = small_sol.cfg.T
    assert a.loss.size == a.grad_sq.size == a.dist_sq.size == T + 1
    assert a.accuracy_metric.size == len(a.members) == T
    rows = a.csv_rows()
    assert len(rows) == T + 1 and len(rows[0]) == len(FLRunRecord.CSV_COLUMNS)


@pytest.mark.parametrize("mode", [WITH_REPLACEMENT, WITHOUT_REPLACEMENT])
def test_modes_run(small_sol, mode):
    task = make_quadratic_task(N=small_sol.cfg.N, seed=1)
    rec = run_fedpcs(small_sol, task, seed=0, lr=0.1, mode=mode)
    assert all(len(m) == small_sol.cfg.K for m in rec.members)
    if mode == WITHOUT_REPLACEMENT:
        assert all(len(set(m.tolist())) == len(m) for m in rec.members)


def test_more_budget_means_less_loss_on_average():
    task = make_quadratic_task(N=8, d=4, samples=10, seed=6)
    T, lr = 20, 0.2
    hi = np.full((8, T + 1), 6.0)
    lo = np.full((8, T + 1), 0.01)
    p = np.full(8, 1 / 8)
    Lhi = np.mean([run_fl(task, hi, p, 3, lr, s, clip=1.0).loss for s in range(20)], axis=0)
    Llo = np.mean([run_fl(task, lo, p, 3, lr, s, clip=1.0).loss for s in range(20)], axis=0)
    assert np.all(Lhi[1:] <= Llo[1:])


@given(st.lists(st.floats(0.01, 12.0), min_size=1, max_size=10), st.integers(1, 50))
def test_accuracy_metric_positive_and_decreasing_in_t(b, t):
    b = np.array(b)
    th = np.full(b.size, 1 / b.size)
    n = np.ones(b.size)
    a = accuracy_loss_metric(b, th, n, t)
    assert a > 0 and accuracy_loss_metric(b, th, n, t + 1) < a
