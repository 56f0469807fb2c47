"""Per-round reward and sampling ratio under a time-varying privacy cap.

The server may only draw clients whose budgets sum to at most B_t. Along the
binding cap K = B_t / rho the cost of a round is B_t (upsilon / rho^2 +
(1 - gamma) R), which is minimized at rho* = (2 G upsilon / (1 - gamma))^(1/3);
the subset size is then the number of such budgets that fit under the cap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import streams
from .fltrain import FLRunRecord, accuracy_loss_metric, train_round
from .game import GameConfig, GameSolution, solve_game
from .sampling import WITHOUT_REPLACEMENT, SampledSubset, SamplingDistribution, sample_clients


class DegenerateGameError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetConstraintSchedule:
    B: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.B, dtype=float).reshape(-1)
        if b.size == 0 or np.any(~np.isfinite(b)) or np.any(b <= 0):
            raise ValueError("every privacy cap B_t must be positive and finite")
        object.__setattr__(self, "B", b)

    @classmethod
    def constant(cls, value: float, T: int) -> "BudgetConstraintSchedule":
        return cls(np.full(T + 1, float(value)))

    @classmethod
    def linear(cls, start: float, stop: float, T: int) -> "BudgetConstraintSchedule":
        return cls(np.linspace(start, stop, T + 1))


@dataclass(frozen=True)
class AdaptiveDecision:
    reward: float
    tau: float
    K: int
    delta: float  # multiplier as given by the closed form, may be negative
    rho_star: float
    constraint_active: bool  # delta >= 0
    tau_clipped: bool
    K_clamped: bool  # floor gave 0 and K was raised to 1


def _rho_star(G: float, upsilon: float, gamma: float) -> float:
    return (2.0 * G * upsilon / (1.0 - gamma)) ** (1.0 / 3.0)


def upsilon(gamma: float, theta: float, datasize: float, t: int, scale: float = 1.0) -> float:
    """gamma theta^2 / (t |D|^2), times the accuracy scale used by the game."""
    if t < 1:
        raise ValueError("shifted round index must be >= 1")
    return scale * gamma * theta**2 / (t * datasize**2)


def adaptive_reward_and_ratio(
    t: int, B_t: float, G: float, H: float, gamma: float, theta: float, datasize: float, N: int,
    scale: float = 1.0,
) -> AdaptiveDecision:
    """Closed-form reward and sampling ratio for homogeneous clients at shifted round t."""
    if G == 0:
        raise DegenerateGameError("budget response to reward is zero")
    if B_t <= 0:
        raise ValueError("B_t must be positive")
    ups = upsilon(gamma, theta, datasize, t, scale)
    r = _rho_star(G, ups, gamma)
    R = r / G - H / G
    count = int(np.floor(B_t / r))
    clipped = count > N
    clamped = count < 1
    K = min(max(count, 1), N)
    delta = ups * r**-2 - (1 - gamma) / G * (2 * r - H)
    return AdaptiveDecision(float(R), K / N, K, float(delta), float(r), bool(delta >= 0), clipped, clamped)


@dataclass(frozen=True)
class KKTResiduals:
    reward_stationarity: float  # relative residual of dL/dR
    size_stationarity: float  # relative residual of dL/dK
    slackness: float  # |delta (K rho - B)| / B on the relaxed size K = B / rho*
    integer_slack: float  # (B - floor(B/rho*) rho*) / B, unused cap after rounding down


def kkt_residuals(d: AdaptiveDecision, B_t: float, G: float, H: float, gamma: float, ups: float) -> KKTResiduals:
    rho = G * d.reward + H
    dR = -G * ups / rho**2 + (1 - gamma) * (2 * G * d.reward + H) + d.delta * G
    scaleR = abs(G * ups / rho**2) + abs((1 - gamma) * (2 * G * d.reward + H)) + abs(d.delta * G)
    dK = ups / rho + ((1 - gamma) * d.reward + d.delta) * rho
    scaleK = abs(ups / rho) + abs(((1 - gamma) * d.reward + d.delta) * rho)
    k_relaxed = B_t / d.rho_star
    cs = abs(d.delta * (k_relaxed * rho - B_t)) / B_t
    used = int(np.floor(B_t / d.rho_star)) * d.rho_star
    return KKTResiduals(abs(dR) / scaleR, abs(dK) / scaleK, cs, (B_t - used) / B_t)


@dataclass(frozen=True)
class OracleResult:
    reward: float
    K: int
    cost: float
    cell: float  # reward grid spacing


def grid_oracle(
    B_t: float, G: float, H: float, gamma: float, ups: float, N: int,
    R_range: tuple[float, float], points: int = 2001, binding: bool = False,
) -> OracleResult:
    """Brute-force search over a reward grid and every K in 1..N.

    Without ``binding`` this minimizes the round cost K (ups / rho + (1 - gamma) R rho)
    subject to K rho <= B_t. With ``binding`` the cap is treated as exhausted:
    each reward is charged B_t (ups / rho^2 + (1 - gamma) R) and K is the
    largest feasible count.
    """
    grid = np.linspace(R_range[0], R_range[1], points)
    rho = G * grid + H
    ok = rho > 0
    best = (np.inf, np.nan, 0)
    for R, r in zip(grid[ok], rho[ok]):
        if binding:
            K = min(int(np.floor(B_t / r)), N)
            if K < 1:
                continue
            cost = B_t * (ups / r**2 + (1 - gamma) * R)
            if cost < best[0]:
                best = (cost, R, K)
            continue
        per = ups / r + (1 - gamma) * R * r
        for K in range(1, N + 1):
            if K * r > B_t:
                break
            if K * per < best[0]:
                best = (K * per, R, K)
    return OracleResult(float(best[1]), int(best[2]), float(best[0]), float(grid[1] - grid[0]))


@dataclass(frozen=True)
class HeterogeneousDecision:
    reward: float
    members: np.ndarray  # clients admitted, ascending index
    budgets: np.ndarray
    iterations: int


def heterogeneous_reward_and_subset(
    B_t: float, G, H, ups, gamma: float, R_bounds: tuple[float, float] | None = None, max_iter: int = 50,
) -> HeterogeneousDecision:
    """Alternate a reward search for a fixed subset with greedy admission for a fixed reward.

    Uses the same per-unit-budget criterion as the homogeneous closed form:
    the reward minimizes sum(cost_i) / sum(rho_i) over the current subset, and
    clients are admitted in increasing order of cost_i / rho_i while the cap
    holds.
    """
    G, H, ups = (np.asarray(v, dtype=float) for v in (G, H, ups))
    if np.any(G <= 0):
        raise DegenerateGameError("every client needs a positive budget response")
    lo = float(np.max(-H / G)) + 1e-12
    hi = lo + 1e3 if R_bounds is None else R_bounds[1]
    if R_bounds is not None:
        lo = max(lo, R_bounds[0])
    members = np.arange(G.size)
    R = lo
    for it in range(1, max_iter + 1):
        def ratio(r, m=members):
            rho = G[m] * r + H[m]
            return float(np.sum(ups[m] / rho + (1 - gamma) * r * rho) / np.sum(rho))

        R = float(minimize_scalar(ratio, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}).x)
        rho = G * R + H
        order = np.argsort((ups / rho + (1 - gamma) * R * rho) / rho, kind="stable")
        take = order[np.cumsum(rho[order]) <= B_t]
        new = np.sort(take if take.size else order[:1])
        if np.array_equal(new, members):
            break
        members = new
    rho = G * R + H
    return HeterogeneousDecision(R, members, rho[members], it)


@dataclass
class AdaptivePlan:
    B: np.ndarray
    tau: np.ndarray
    K_t: np.ndarray
    rewards: np.ndarray
    delta: np.ndarray
    usage_ratio: np.ndarray
    flags: list = field(default_factory=list)

    CSV_COLUMNS = ("t", "B_t", "K_t", "tau", "R", "delta", "usage_ratio")

    def csv_rows(self) -> list[list]:
        return [
            [t, repr(float(self.B[t])), int(self.K_t[t]), repr(float(self.tau[t])),
             repr(float(self.rewards[t])), repr(float(self.delta[t])), repr(float(self.usage_ratio[t]))]
            for t in range(len(self.K_t))
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            w.writerows(self.csv_rows())


def _round_response(sol: GameSolution, t: int) -> tuple[float, float]:
    """Population-mean budget response rho = G R + H at round t, anchored at the solved budgets."""
    tt = max(t, 1)
    G = float(np.mean(sol.G[:, tt]))
    H = float(np.mean(sol.budgets[:, tt] - sol.G[:, tt] * sol.rewards[tt]))
    return G, H


def truncate_to_cap(members, budgets_t, B_t: float) -> np.ndarray:
    """Longest prefix of the draw order whose budgets fit under the cap."""
    m = np.asarray(members)
    used = np.cumsum(np.asarray(budgets_t)[m])
    return m[: int(np.searchsorted(used, B_t, side="right"))]


def run_adaptive(
    cfg: GameConfig,
    schedule: BudgetConstraintSchedule,
    task,
    seed: int = 0,
    lr: float = 0.1,
    sol: GameSolution | None = None,
    strategy: str = "fedpcs",
    freeze_t: bool = False,
    clip_params: bool = True,
) -> tuple[FLRunRecord, AdaptivePlan]:
    """Train T rounds with per-round (R*, K_t) from the closed form and a hard privacy cap.

    ``strategy`` "fedpcs" samples proportionally to the solved budgets,
    "random" samples uniformly; both use the same K_t, budgets and cap so
    their usage ratios are paired. Drawn clients beyond the cap are dropped
    in draw order; a round whose first draw already exceeds the cap is skipped.
    """
    if strategy not in ("fedpcs", "random"):
        raise ValueError(f"unknown adaptive strategy {strategy!r}")
    sol = solve_game(cfg) if sol is None else sol
    T = cfg.T
    if schedule.B.size != T + 1:
        raise ValueError(f"schedule needs T+1={T + 1} entries")
    theta = float(np.mean(cfg.theta))
    size = float(np.mean(cfg.datasizes))
    taus, Ks, Rs, deltas, usage, flags = [], [], [], [], [], []
    for t in range(T + 1):
        G, H = _round_response(sol, t)
        d = adaptive_reward_and_ratio(1 if freeze_t else t + 1, schedule.B[t], G, H, cfg.gamma,
                                      theta, size, cfg.N, cfg.accuracy_scale)
        taus.append(d.tau)
        Ks.append(d.K)
        Rs.append(d.reward)
        deltas.append(d.delta)
        if d.tau_clipped:
            flags.append((t, "tau-clipped"))
        if d.K_clamped:
            flags.append((t, "K-clamped"))
        if d.reward < 0:
            flags.append((t, "negative-reward"))
    w = np.zeros(task.d)
    loss = [task.loss(w)]
    gsq = [float(task.grad(w) @ task.grad(w))]
    dsq = [float((w - task.w_star) @ (w - task.w_star))]
    acc, members, used_p, variances = [], [], [], []
    for t in range(T):
        b = sol.budgets[:, t]
        probs = b / b.sum() if strategy == "fedpcs" else np.full(cfg.N, 1.0 / cfg.N)
        dist = SamplingDistribution(probs, t)
        draw = sample_clients(dist, Ks[t], WITHOUT_REPLACEMENT, streams.stream(seed, streams.TAG_SAMPLE, t))
        kept = truncate_to_cap(draw.members, b, schedule.B[t])
        usage.append(float(b[kept].sum()) / schedule.B[t])
        members.append(kept)
        used_p.append(dist.probs)
        if kept.size == 0:
            flags.append((t, "skipped"))
            variances.append(np.zeros(cfg.N))
            acc.append(float("nan"))
        else:
            if kept.size < draw.members.size:
                flags.append((t, "truncated"))
            subset = SampledSubset(kept, int(kept.size), WITHOUT_REPLACEMENT)
            w, var = train_round(task, w, subset, dist, b, lr, t, seed, cfg.clip, clip_params)
            variances.append(var)
            acc.append(accuracy_loss_metric(b[kept], task.theta[kept], task.datasizes[kept], t + 1))
        g = task.grad(w)
        loss.append(task.loss(w))
        gsq.append(float(g @ g))
        dsq.append(float((w - task.w_star) @ (w - task.w_star)))
    usage.append(float("nan"))  # the final round trains nothing
    rec = FLRunRecord(
        f"adaptive-{strategy}", seed, np.array(loss), np.array(gsq), np.array(dsq), np.array(acc),
        members, np.array(used_p), np.array(variances), sol.budgets.copy(), np.array(Rs),
        flags=[f"{t}:{f}" for t, f in flags],
    )
    plan = AdaptivePlan(schedule.B.copy(), np.array(taus), np.array(Ks), np.array(Rs), np.array(deltas),
                        np.array(usage), flags=[f"{t}:{f}" for t, f in flags])
    return rec, plan
