"""Social welfare and price of anarchy under different sampling rules."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


def social_welfare(budgets, rewards, varphi) -> float:
    """sum_t sum_i (rho_i^t R_t - varphi_i (rho_i^t)^2) over an N x (T+1) budget matrix."""
    b = np.asarray(budgets, dtype=float)
    R = np.asarray(rewards, dtype=float)
    w = np.asarray(varphi, dtype=float)
    if b.ndim != 2 or b.shape != (w.size, R.size):
        raise ValueError(f"budgets shape {b.shape} does not match (N={w.size}, T+1={R.size})")
    return float(np.sum(b * R[None, :] - w[:, None] * b**2))


@dataclass(frozen=True)
class OptimalBudget:
    value: float
    clamped: float


def socially_optimal_budget(R: float, varphi_i: float, rho_low: float = 0.0, rho_high: float = np.inf) -> OptimalBudget:
    """Welfare-maximizing budget R / (2 varphi), with its projection onto [rho_low, rho_high]."""
    v = R / (2.0 * varphi_i)
    return OptimalBudget(v, float(np.clip(v, rho_low, rho_high)))


def optimal_social_welfare(rewards, varphi) -> float:
    """(1/4) sum_t R_t^2 sum_i 1/varphi_i."""
    R = np.asarray(rewards, dtype=float)
    w = np.asarray(varphi, dtype=float)
    return 0.25 * float(np.sum(R**2)) * float(np.sum(1.0 / w))


def poa(sw_opt: float, sw_nash: float) -> float:
    """Ratio sw_opt / sw_nash; +inf when the equilibrium welfare is not positive."""
    if sw_nash <= 0:
        return float("inf")
    return sw_opt / sw_nash


def random_nash_welfare(rewards, varphi, rho_low: float, N: int, T: int) -> float:
    """Welfare when every client sits at rho_low, the worst equilibrium under uniform sampling."""
    R = np.asarray(rewards, dtype=float)
    return N * rho_low * float(R.sum()) - (T + 1) * rho_low**2 * float(np.sum(varphi))


def privacy_nash_welfare(rewards, varphi, rho_high: float, N: int, T: int) -> float:
    """Welfare when every client sits at rho_high."""
    R = np.asarray(rewards, dtype=float)
    return N * rho_high * float(R.sum()) - (T + 1) * rho_high**2 * float(np.sum(varphi))


def random_poa_lower_bound(rewards, varphi, rho_low: float, N: int, T: int) -> float:
    """sum R * sum 1/varphi / (4 N rho_low (T+1)); grows without bound as rho_low -> 0."""
    R = np.asarray(rewards, dtype=float)
    return float(R.sum()) * float(np.sum(1.0 / np.asarray(varphi))) / (4 * N * rho_low * (T + 1))


@dataclass(frozen=True)
class PoABound:
    value: float
    limit: float  # value as rho_high -> infinity
    applicable: bool
    denominator_positive: bool
    sum_condition: bool  # N sum R <= (T+1) sum varphi, used by the proof's first step


def privacy_poa_upper_bound(r_max: float, N: int, varphi, rho_high: float, rewards, T: int) -> PoABound:
    """r_max sum 1/varphi / (2 (N - (T+1) sum varphi / (rho_high sum R))).

    The bound is flagged inapplicable when its denominator is not positive or
    when N sum R <= (T+1) sum varphi fails.
    """
    w = np.asarray(varphi, dtype=float)
    R = np.asarray(rewards, dtype=float)
    inv = float(np.sum(1.0 / w))
    sR = float(R.sum())
    den = N - (T + 1) * float(w.sum()) / (rho_high * sR) if sR > 0 else -np.inf
    cond = N * sR <= (T + 1) * float(w.sum())
    positive = den > 0
    value = r_max * inv / (2 * den) if positive else float("inf")
    return PoABound(value, r_max * inv / (2 * N), bool(positive and cond), bool(positive), bool(cond))


@dataclass
class WelfareReport:
    sw_opt: float
    sw_nash: float
    poa: float
    sw_random: float
    poa_random: float
    rand_lower_bound: float
    sw_privacy_worst: float
    poa_privacy_worst: float
    pri_upper_bound: float
    pri_bound_limit: float
    pri_bound_applicable: bool
    pri_denominator_positive: bool
    sum_condition: bool
    r_max: float
    nash_nonpositive: bool

    def to_dict(self) -> dict:
        return asdict(self)


def welfare_report(budgets, rewards, varphi, rho_low: float, rho_high: float) -> WelfareReport:
    """Evaluate every welfare quantity for a played budget profile."""
    b = np.asarray(budgets, dtype=float)
    R = np.asarray(rewards, dtype=float)
    N, T = b.shape[0], b.shape[1] - 1
    opt = optimal_social_welfare(R, varphi)
    nash = social_welfare(b, R, varphi)
    rnd = random_nash_welfare(R, varphi, rho_low, N, T)
    pri = privacy_nash_welfare(R, varphi, rho_high, N, T)
    r_max = float(R.max())
    bound = privacy_poa_upper_bound(r_max, N, varphi, rho_high, R, T)
    return WelfareReport(
        sw_opt=opt,
        sw_nash=nash,
        poa=poa(opt, nash),
        sw_random=rnd,
        poa_random=poa(opt, rnd),
        rand_lower_bound=random_poa_lower_bound(R, varphi, rho_low, N, T),
        sw_privacy_worst=pri,
        poa_privacy_worst=poa(opt, pri),
        pri_upper_bound=bound.value,
        pri_bound_limit=bound.limit,
        pri_bound_applicable=bound.applicable,
        pri_denominator_positive=bound.denominator_positive,
        sum_condition=bound.sum_condition,
        r_max=r_max,
        nash_nonpositive=nash <= 0,
    )
