"""Closed-form convergence and accuracy-loss bounds, evaluated as printed.

Every evaluator takes a :class:`BoundConstants` record. Constants that the
assumptions only bound from above or below are estimated on trajectories and
inflated (or deflated) by 10%.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.linalg import eigh

from ..zcdp import noise_variance

INFLATE = 1.1


@dataclass(frozen=True)
class BoundConstants:
    beta: float
    psi: float
    mu: float
    kappa: float
    kappa_G: float
    M: float
    M_V: float
    D: float
    V: float
    g_norm: float
    d: int
    W: float
    eta: float
    rho_low: float
    rho_high: float
    N: int
    K: int
    theta: tuple
    datasizes: tuple

    def with_eta(self, eta: float) -> "BoundConstants":
        return replace(self, eta=float(eta))

    @property
    def prob_factor(self) -> float:
        """[(N-1) rho_H + rho_L] / (K rho_L), the inverse-probability amplification."""
        return ((self.N - 1) * self.rho_high + self.rho_low) / (self.K * self.rho_low)

    @property
    def lr_ceiling(self) -> float:
        return self.kappa / (self.beta * (self.M_V + self.kappa_G**2))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta"] = list(self.theta)
        out["datasizes"] = list(self.datasizes)
        return out


@dataclass(frozen=True)
class BoundValue:
    value: float
    valid: bool
    factor: float  # geometric decay factor, NaN when none applies


def _alignment_ratios(task, models):
    """Per-point min alignment and max relative norm over clients."""
    kap, kg = np.inf, 0.0
    for w in models:
        g = task.grad(w)
        n2 = float(g @ g)
        if n2 <= 1e-24:
            continue
        for i in range(task.N):
            gi = task.local_grad(i, w)
            kap = min(kap, float(g @ gi) / n2)
            kg = max(kg, float(np.linalg.norm(gi)) / np.sqrt(n2))
    return kap, kg


def _shared_optimum_ratios(task):
    """Exact extremes of the alignment ratios when every gradient is A_i (w - w*)."""
    A = sum(task.theta[i] * task.local_hessian(i) for i in range(task.N))
    A2 = A @ A
    kap, kg = np.inf, 0.0
    for i in range(task.N):
        Ai = task.local_hessian(i)
        S = 0.5 * (A @ Ai + Ai @ A)
        kap = min(kap, float(eigh(S, A2, eigvals_only=True)[0]))
        kg = max(kg, float(np.sqrt(eigh(Ai @ Ai, A2, eigvals_only=True)[-1])))
    return kap, kg


def estimate_constants(task, models, eta: float, rho_low: float, rho_high: float, K: int, W: float) -> BoundConstants:
    """Constants for a task given visited models (any iterable of parameter vectors).

    beta and psi come from the Hessian. D and V are trajectory maxima times 1.1,
    kappa is the trajectory minimum times 0.9 and kappa_G the maximum times 1.1.
    For a shared-optimum quadratic the exact generalized-eigenvalue extremes
    are folded in so the constants hold on the whole space. Full-batch
    gradients have no sampling variance, so M = M_V = 0.
    """
    pts = np.asarray(list(models), dtype=float).reshape(-1, task.d)
    D = max(float(np.linalg.norm(task.local_grad(i, w))) for w in pts for i in range(task.N))
    V = max(float(np.linalg.norm(task.grad(w))) for w in pts)
    kap, kg = _alignment_ratios(task, pts)
    if task.kind == "quadratic" and task.shared_optimum:
        ek, eg = _shared_optimum_ratios(task)
        kap, kg = min(kap, ek), max(kg, eg)
    kappa = kap * (2 - INFLATE) if kap > 0 else kap
    kappa_G = max(kg * INFLATE, kappa)
    return BoundConstants(
        beta=task.beta, psi=task.psi, mu=task.mu, kappa=kappa, kappa_G=kappa_G, M=0.0, M_V=0.0,
        D=D * INFLATE, V=V * INFLATE, g_norm=V * INFLATE, d=task.d, W=W, eta=float(eta),
        rho_low=rho_low, rho_high=rho_high, N=task.N, K=int(K),
        theta=tuple(float(x) for x in task.theta), datasizes=tuple(float(x) for x in task.datasizes),
    )


def _variances(c: BoundConstants, budgets) -> np.ndarray:
    return np.array([noise_variance(b, int(n), c.W) if c.W > 0 else 0.0
                     for b, n in zip(budgets, c.datasizes)])


def accuracy_loss_upper_bound(c: BoundConstants, budgets, theta, datasizes, t: int) -> float:
    """beta / (2 mu^2 t) * (V^2 + 2 d W^2 sum theta^2 / (|D|^2 rho))."""
    if t < 1:
        raise ValueError("shifted round index must be >= 1")
    th = np.asarray(theta, dtype=float)
    n = np.asarray(datasizes, dtype=float)
    r = np.asarray(budgets, dtype=float)
    noise = 2 * c.d * c.W**2 * float(np.sum(th**2 / (n**2 * r)))
    return c.beta / (2 * c.mu**2 * t) * (c.V**2 + noise)


def _noise_floor(c: BoundConstants) -> float:
    return 2 * c.d * c.K * c.W**2 / (c.rho_low * sum(c.datasizes) ** 2)


def optimality_gap_bounds(c: BoundConstants, T: int, initial_gap: float) -> tuple[BoundValue, BoundValue]:
    """Convex and non-convex bounds on E||w(T) - w*||^2.

    ``initial_gap`` is E||w(0) - w*||^2. The convex value is flagged invalid
    when its decay factor lies outside (0, 1).
    """
    q = c.prob_factor
    eta, beta, D2 = c.eta, c.beta, c.D**2
    nz = D2 + _noise_floor(c)
    a = 1 - c.psi * eta * q
    per = beta * D2 * eta**3 * q + eta**2 * q**2 * nz + beta * eta**3 * q**3 * nz
    convex = a**T * initial_gap + sum(a**s for s in range(T)) * per
    g = c.g_norm
    nonconvex = (
        (1 + 2 * T * eta * g * q) * initial_gap
        + T * beta * eta**3 * q**3 * nz
        + T * eta**2 * q**2 * ((T - 1) * g * c.D + nz)
        + T * beta * D2 * eta**3 * q
    )
    return BoundValue(float(convex), bool(0 < a < 1), float(a)), BoundValue(float(nonconvex), True, float("nan"))


def one_round_progress_bound(c: BoundConstants, x, sigma2, grad_sq_prev: float) -> float:
    """Bound on E[F(w(t)) - F(w(t-1))] given the round's probabilities and noise variances."""
    th = np.asarray(c.theta)
    x = np.asarray(x, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    eta, beta = c.eta, c.beta
    return float(
        -eta * c.kappa / 2 * grad_sq_prev
        + c.d * beta * eta**2 / 2 * np.sum(th**2 * s2)
        + beta * eta / (2 * c.K) * np.sum(th**2 / x * (c.D**2 + c.d * s2))
        + c.M * beta * eta**2 * c.N / 2
    )


def convergence_rate_and_error_bounds(c: BoundConstants, probs, sigma2, initial_gap: float) -> tuple[BoundValue, BoundValue]:
    """Loss-gap bound after T rounds and average squared-gradient bound.

    ``probs`` and ``sigma2`` are T x N per-round trajectories; ``initial_gap``
    is E[F(w(0))] - F(w*). Both values are flagged invalid when the learning
    rate exceeds kappa / (beta (M_V + kappa_G^2)).
    """
    P = np.atleast_2d(np.asarray(probs, dtype=float))
    S = np.atleast_2d(np.asarray(sigma2, dtype=float))
    T = P.shape[0]
    th2 = np.asarray(c.theta) ** 2
    eta, beta, K, d = c.eta, c.beta, c.K, c.d
    valid = bool(eta <= c.lr_ceiling and c.kappa > 0)
    a = 1 - c.mu * eta * c.kappa
    rate = a**T * initial_gap
    err = 2 / (eta * c.kappa * T) * initial_gap if c.kappa > 0 else float("inf")
    for t in range(T):
        x, s2 = P[t], S[t]
        inner = c.M * c.N * eta + np.sum(th2 * c.D**2 / (K * x) + (1 / (K * x) + eta) * d * th2 * s2)
        rate += beta * eta / 2 * a**t * inner
        inner = c.M * beta * eta**2 * c.N / 2 + np.sum(th2 / (K * x) * (c.D**2 + d * s2) + d * eta * th2 * s2)
        err += beta * eta / (2 * T) * inner
    return BoundValue(float(rate), valid and 0 < a < 1, float(a)), BoundValue(float(err), valid, float("nan"))
