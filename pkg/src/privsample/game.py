"""Two-stage leader/follower game between the server and the clients.

The server picks a reward R_t per round; each client picks correction factors
alpha_i^t that blend its own budget with the population mean phi(t)
(rho^{t+1} = (1 - alpha) phi(t) + alpha rho^t). The mean field phi is found as
a fixed point of the clients' best responses.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from . import streams
from .sampling import inclusion_probability


class NonConvergenceError(RuntimeError):
    """Raised when the fixed-point iteration exhausts its budget."""

    def __init__(self, message: str, residual_trace: list[float]):
        super().__init__(message)
        self.residual_trace = list(residual_trace)


class RewardSolverError(RuntimeError):
    pass


@dataclass
class GameConfig:
    N: int = 100
    T: int = 30
    tau: float = 0.2
    K: int | None = None
    gamma: float = 0.5
    rho_low: float = 0.01
    rho_high: float = 12.0
    varphi: np.ndarray | None = None
    theta: np.ndarray | None = None
    datasizes: np.ndarray | None = None
    clip: float = 1.0
    dim: int = 10
    eps0: float = 1e-3
    alpha_clamp: float = 1e-6
    max_outer_iters: int = 30
    max_round_iters: int = 60
    # multiplies the accuracy-loss term of the server cost; None means
    # 1000 N**2. At N**2 the term is O(1) for uniform theta = 1/N and unit
    # datasets, too small to make any positive reward worth paying
    accuracy_scale: float | None = None
    # "inclusion": the server's per-round cost is the expectation over the
    # sampled subset, each client weighted by its inclusion probability;
    # "uniform": every client counts once
    server_weighting: str = "inclusion"
    seed: int = 0

    def __post_init__(self):
        if int(self.N) < 2:
            raise ValueError("N must be >= 2")
        if int(self.T) < 1:
            raise ValueError("T must be >= 1")
        self.N = int(self.N)
        self.T = int(self.T)
        if self.K is None:
            if not 0 < self.tau <= 1:
                raise ValueError("tau must lie in (0, 1]")
            self.K = max(1, int(round(self.tau * self.N)))
        self.K = int(self.K)
        if not 1 <= self.K <= self.N:
            raise ValueError("K must lie in [1, N]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.rho_low < self.rho_high:
            raise ValueError("need 0 < rho_low < rho_high")
        if self.varphi is None:
            rng = streams.stream(self.seed, streams.TAG_INIT, 0)
            self.varphi = rng.uniform(0.0, 1.0, self.N)
        self.varphi = np.asarray(self.varphi, dtype=float).reshape(-1)
        if self.varphi.size == 1:
            self.varphi = np.full(self.N, self.varphi[0])
        if self.theta is None:
            self.theta = np.full(self.N, 1.0 / self.N)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.datasizes is None:
            self.datasizes = np.ones(self.N)
        self.datasizes = np.asarray(self.datasizes, dtype=float).reshape(-1)
        for name in ("varphi", "theta", "datasizes"):
            if getattr(self, name).shape != (self.N,):
                raise ValueError(f"{name} must have length N={self.N}")
        if np.any(self.varphi <= 0) or np.any(self.varphi >= 1):
            raise ValueError("varphi entries must lie in (0, 1)")
        if abs(self.theta.sum() - 1.0) > 1e-12 or np.any(self.theta < 0):
            raise ValueError("theta must be non-negative and sum to 1")
        if np.any(self.datasizes < 1):
            raise ValueError("datasizes must be >= 1")
        if self.clip <= 0 or self.dim < 1 or self.eps0 <= 0:
            raise ValueError("clip, dim and eps0 must be positive")
        if not 0 < self.alpha_clamp < 1:
            raise ValueError("alpha_clamp must lie in (0, 1)")
        if self.accuracy_scale is None:
            self.accuracy_scale = 1000.0 * float(self.N) ** 2
        if self.accuracy_scale <= 0:
            raise ValueError("accuracy_scale must be positive")
        if self.server_weighting not in ("inclusion", "uniform"):
            raise ValueError("server_weighting must be 'inclusion' or 'uniform'")

    @property
    def alpha_max(self) -> float:
        return 1.0 - self.alpha_clamp

    def server_weights(self, budgets_t, phi_t: float) -> np.ndarray:
        """Per-client weight of round-t terms in the server cost."""
        if self.server_weighting == "uniform":
            return np.ones(self.N)
        return inclusion_probability(np.asarray(budgets_t) / (self.N * phi_t), self.K)

    def cost_weights(self, t: int) -> np.ndarray:
        """Per-client accuracy-loss coefficient at (already shifted) round index t."""
        return self.gamma * self.accuracy_scale * self.theta**2 / (t * self.datasizes**2)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def initial_budgets(cfg: GameConfig) -> np.ndarray:
    """rho_i^0 drawn uniformly from [rho_low, rho_high] under the config seed."""
    rng = streams.stream(cfg.seed, streams.TAG_INIT, 1)
    return rng.uniform(cfg.rho_low, cfg.rho_high, cfg.N)


# ---------------------------------------------------------------- single-client ops


def budget_update(rho: float, alpha: float, phi_t: float, cfg: GameConfig) -> float:
    nxt = (1.0 - alpha) * phi_t + alpha * rho
    return float(np.clip(nxt, cfg.rho_low, cfg.rho_high))


def client_utility(
    cfg: GameConfig, i: int, alphas_i, budgets_i, rewards, phi
) -> float:
    alphas_i, budgets_i, rewards, phi = (
        np.asarray(v, dtype=float) for v in (alphas_i, budgets_i, rewards, phi)
    )
    n = cfg.T + 1
    for name, v in (("alphas", alphas_i), ("budgets", budgets_i), ("rewards", rewards), ("phi", phi)):
        if v.shape != (n,):
            raise ValueError(f"{name} must have length T+1={n}, got {v.shape}")
    w = cfg.varphi[i]
    p = inclusion_probability(budgets_i / (cfg.N * phi), cfg.K)
    per_round = budgets_i * rewards - w * budgets_i**2 - (1 - w) * alphas_i**2
    return float(np.sum(p * per_round))


def costate_terms(
    cfg: GameConfig, i: int, rho: float, alpha: float, R: float, phi_t: float, form: str = "printed"
) -> tuple[float, float, float]:
    """(Q, M, S) with S = Q R + M.

    ``form="printed"`` uses M exactly as the closed form prints it. ``"exact"``
    carries the chain-rule factor K/(N phi) on the second term, which is the
    true derivative of the per-round utility with respect to rho.
    """
    if phi_t <= 0:
        raise ValueError("phi(t) must be positive")
    K, w = cfg.K, cfg.varphi[i]
    x = rho / (cfg.N * phi_t)
    b = 1.0 - x
    p = 1.0 - b**K
    tail = b ** (K - 1)
    Q = p + tail * K * x
    second = tail * (w * rho**2 + (1 - w) * alpha**2)
    if form == "printed":
        M = -2 * w * rho * p - second
    elif form == "exact":
        M = -2 * w * rho * p - K / (cfg.N * phi_t) * second
    else:
        raise ValueError(f"unknown costate form {form!r}")
    return Q, M, Q * R + M


def correction_factor(
    cfg: GameConfig, i: int, t: int, rho: float, phi_t: float, future_alphas, future_S
) -> float:
    """Closed-form alpha_i^t from the costate sum, clamped to [0, 1 - alpha_clamp].

    ``future_alphas`` holds alpha^{t+1..T} and ``future_S`` holds S(t+1..T).
    """
    if t >= cfg.T:
        return 0.0
    if rho == phi_t:
        return 0.0
    fa = np.asarray(future_alphas, dtype=float)
    fS = np.asarray(future_S, dtype=float)
    if fS.size == 0:
        raise ValueError("need S(t+1..T)")
    # lambda(t+1) = S(t+1) + sum_{j>=t+2} S(j) prod_{r=t+1}^{j-1} alpha^r
    prods = np.concatenate([[1.0], np.cumprod(fa[: fS.size - 1])])
    lam_next = float(np.sum(fS * prods))
    p = float(inclusion_probability(rho / (cfg.N * phi_t), cfg.K))
    if p == 0:
        raise ValueError("sampling probability is zero")
    a = (rho - phi_t) * lam_next / (2 * (1 - cfg.varphi[i]) * p)
    return float(np.clip(a, 0.0, cfg.alpha_max))


def server_cost(
    R: float, budgets, t: int, gamma: float, theta, datasizes, scale: float = 1.0
) -> float:
    """Accuracy-loss plus reward outlay over the given clients at round t >= 1."""
    if t < 1:
        raise ValueError("server cost is singular at t=0; pass the shifted index t+1")
    r = np.asarray(budgets, dtype=float)
    if np.any(r <= 0):
        raise ValueError("budgets must be positive")
    c = gamma * scale * np.asarray(theta, dtype=float) ** 2 / (t * np.asarray(datasizes, dtype=float) ** 2)
    return float(np.sum(c / r + (1 - gamma) * R * r))


def reward_cost_derivative(R, G, H, c, gamma, weights=1.0) -> float:
    """d/dR of sum w (c/(GR+H) + (1-gamma) R (GR+H))."""
    r = G * R + H
    return float(np.sum(weights * ((1 - gamma) * (r + R * G) - c * G / r**2)))


def optimal_reward(
    t: int, G, H, gamma: float, theta, datasizes, scale: float = 1.0, weights=None, max_exp: int = 60
) -> float:
    """Minimize the server cost over R along rho_i = G_i R + H_i.

    ``weights`` scales each client's contribution (e.g. its inclusion
    probability, giving the expected cost over the sampled subset).

    The derivative is increasing on the feasible set, so bisection on the
    first-order condition finds the global minimizer. When it is already
    non-negative at the lower end of the feasible set the minimizer is that
    corner (typically R = 0).
    """
    if t < 1:
        raise ValueError("pass the shifted round index t >= 1")
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    c = gamma * scale * np.asarray(theta, dtype=float) ** 2 / (t * np.asarray(datasizes, dtype=float) ** 2)
    w = np.ones_like(G) if weights is None else np.asarray(weights, dtype=float)
    lo = 0.0
    need = (G > 0) & (H <= 0)
    if need.any():
        lo = max(lo, float(np.max(-H[need] / G[need])))
    if np.any((G <= 0) & (G * lo + H <= 0)):
        raise RewardSolverError("some budget is non-positive for every admissible reward")
    a = lo + 1e-12 * (1.0 + lo) if lo > 0 else 0.0
    with np.errstate(divide="ignore"):
        at_lo = reward_cost_derivative(a, G, H, c, gamma, w)
    if at_lo >= 0:
        return a
    b = max(1.0, 2 * a)
    while reward_cost_derivative(b, G, H, c, gamma, w) < 0:
        b *= 2.0
        if b > 2.0**max_exp:
            raise RewardSolverError(
                f"no sign change of the first-order condition up to R={b:g} (round {t})"
            )
    with np.errstate(divide="ignore"):
        return float(bisect(reward_cost_derivative, a, b, args=(G, H, c, gamma, w), xtol=1e-300, rtol=1e-15,
                            maxiter=2000))


# ---------------------------------------------------------------- population dynamics


class _Population:
    """Vectorized forward/adjoint evaluation of every client's control problem."""

    def __init__(self, cfg: GameConfig, rho0: np.ndarray):
        self.cfg = cfg
        self.N, self.T, self.K = cfg.N, cfg.T, cfg.K
        self.rho0 = np.asarray(rho0, dtype=float)
        self.w = cfg.varphi
        self.hi = cfg.alpha_max

    def forward(self, a: np.ndarray, phi: np.ndarray, rows=None) -> np.ndarray:
        r0 = self.rho0 if rows is None else self.rho0[rows]
        rho = np.empty((a.shape[0], self.T + 1))
        rho[:, 0] = r0
        lo, hi = self.cfg.rho_low, self.cfg.rho_high
        for t in range(self.T):
            # minimum/maximum instead of np.clip: this loop is the solver's hot path
            nxt = rho[:, t + 1]
            np.multiply(a[:, t], rho[:, t] - phi[t], out=nxt)
            nxt += phi[t]
            np.maximum(nxt, lo, out=nxt)
            np.minimum(nxt, hi, out=nxt)
        return rho

    def _pad(self, a):
        alpha = np.zeros((a.shape[0], self.T + 1))
        alpha[:, : self.T] = a
        return alpha

    def utility_grad(self, a, phi, R, rows=None):
        """Utilities and exact gradients with respect to alpha^0..alpha^{T-1}."""
        rows = np.arange(self.N) if rows is None else rows
        w = self.w[rows][:, None]
        alpha = self._pad(a)
        rho = self.forward(a, phi, rows)
        Nphi = self.N * phi
        b = 1 - rho / Nphi
        p = 1 - b**self.K
        dp = self.K * b ** (self.K - 1) / Nphi
        u = rho * R - w * rho**2 - (1 - w) * alpha**2
        U = (p * u).sum(1)
        dr = p * (R - 2 * w * rho) + dp * u
        g = np.empty_like(a)
        lam = dr[:, self.T].copy()
        for t in range(self.T - 1, -1, -1):
            g[:, t] = -2 * (1 - w[:, 0]) * p[:, t] * alpha[:, t] + lam * (rho[:, t] - phi[t])
            lam = dr[:, t] + alpha[:, t] * lam
        return U, g

    def utilities(self, a, phi, R, rows=None):
        rows = np.arange(self.N) if rows is None else rows
        w = self.w[rows][:, None]
        alpha = self._pad(a)
        rho = self.forward(a, phi, rows)
        p = inclusion_probability(rho / (self.N * phi), self.K)
        return (p * (rho * R - w * rho**2 - (1 - w) * alpha**2)).sum(1)

    def grid_improvement(self, a, phi, R, grid_points=50):
        """Best relative gain per client from moving one alpha^t over a uniform grid.

        Returns (gain, improved alphas) where improved rows carry the best
        single-coordinate change.
        """
        grid = np.linspace(0.0, self.hi, grid_points)
        n, T = a.shape
        rows = np.repeat(np.arange(n), grid_points)
        U = self.utilities(a, phi, R)
        best_u = U.copy()
        best_a = a.copy()
        for t in range(T):
            trial = np.repeat(a, grid_points, axis=0)
            trial[:, t] = np.tile(grid, n)
            Ut = self.utilities(trial, phi, R, rows).reshape(n, grid_points)
            k = Ut.argmax(1)
            v = Ut[np.arange(n), k]
            better = v > best_u
            best_u = np.where(better, v, best_u)
            best_a[better] = a[better]
            best_a[better, t] = grid[k[better]]
        return (best_u - U) / np.maximum(np.abs(U), 1e-300), best_a

    def best_response(self, a, phi, R, tol=1e-11, maxit=200, h=1e-6, snap=1e-8, gsnap=1e-7):
        """Projected Newton ascent on every client's utility, all clients at once.

        The Hessian comes from central differences of the adjoint gradient,
        only on free coordinates; indefinite directions are flipped through an
        eigen-decomposition. Returns (alphas, projected gradient norm, iterations).
        """
        n, T, hi = self.N, self.T, self.hi
        allrows = np.arange(n)
        a = np.clip(a, 0.0, hi)
        pgn = np.inf
        for it in range(maxit):
            U, g = self.utility_grad(a, phi, R)
            at_lo = (a <= snap) & (g < gsnap)
            at_hi = (a >= hi - snap) & (g > -gsnap)
            fixed = at_lo | at_hi
            a = np.where(at_lo, 0.0, np.where(at_hi, hi, a))
            pgn = float(np.abs(np.where(fixed, 0.0, g)).max())
            if pgn < tol:
                break
            ii, jj = np.nonzero(~fixed)
            k = ii.size
            P = np.concatenate([a[ii], a[ii]])
            P[np.arange(k), jj] += h
            P[k + np.arange(k), jj] -= h
            gP = self.utility_grad(P, phi, R, np.concatenate([ii, ii]))[1]
            Hs = np.zeros((n, T, T))
            Hs[ii, :, jj] = (gP[:k] - gP[k:]) / (2 * h)
            m = (~fixed).astype(float)
            Hs = 0.5 * (Hs + Hs.transpose(0, 2, 1)) * m[:, :, None] * m[:, None, :]
            A = -Hs + np.eye(T)[None] * (1 - m)[:, :, None]
            ev, V = np.linalg.eigh(A)
            ev = np.abs(ev)
            ev = np.maximum(ev, 1e-8 * np.maximum(1.0, ev.max(1, keepdims=True)))
            d = np.einsum("nij,nj->ni", V, np.einsum("nji,nj->ni", V, g * m) / ev)
            s = np.ones(n)
            done = np.zeros(n, bool)
            anew = a.copy()
            for _ in range(40):
                trial = np.clip(a + s[:, None] * d, 0.0, hi)
                Ut = self.utilities(trial, phi, R, allrows)
                ok = (Ut >= U - 1e-12 * (1 + np.abs(U))) & ~done
                anew[ok] = trial[ok]
                done |= ok
                if done.all():
                    break
                s[~done] *= 0.5
            a = anew
        return a, pgn, it

    def costate(self, a, phi, R):
        """rho, alpha, p, Q, M (exact form), S, lambda for every client."""
        alpha = self._pad(a)
        rho = self.forward(a, phi)
        w = self.w[:, None]
        Nphi = self.N * phi
        x = rho / Nphi
        b = 1 - x
        p = 1 - b**self.K
        tail = b ** (self.K - 1)
        Q = p + tail * self.K * x
        M = -2 * w * rho * p - self.K / Nphi * tail * (w * rho**2 + (1 - w) * alpha**2)
        S = Q * R + M
        lam = np.empty_like(S)
        lam[:, self.T] = S[:, self.T]
        for t in range(self.T - 1, -1, -1):
            lam[:, t] = alpha[:, t] * lam[:, t + 1] + S[:, t]
        return rho, alpha, p, Q, M, S, lam

    def reward_response(self, a, phi, R):
        """Per-round linear response rho^t = G^t R_t + H^t implied by the closed-form alpha."""
        rho, alpha, p, Q, M, S, lam = self.costate(a, phi, R)
        N, T = self.N, self.T
        G = np.full((N, T + 1), np.nan)
        H = np.full_like(G, np.nan)
        I = np.full_like(G, np.nan)
        J = np.full_like(G, np.nan)
        for t in range(1, T + 1):
            d = rho[:, t - 1] - phi[t - 1]
            den = 2 * (1 - self.w) * p[:, t - 1]
            nxt = alpha[:, t] * lam[:, t + 1] if t < T else 0.0
            I[:, t] = d * Q[:, t] / den
            J[:, t] = d * (M[:, t] + nxt) / den
            G[:, t] = d * I[:, t]
            H[:, t] = (1 - J[:, t]) * phi[t - 1] + J[:, t] * rho[:, t - 1]
        return G, H, I, J


# ---------------------------------------------------------------- solution container


@dataclass
class GameSolution:
    cfg: GameConfig
    phi: np.ndarray
    budgets: np.ndarray
    alphas: np.ndarray
    rewards: np.ndarray
    rho0: np.ndarray
    G: np.ndarray
    H: np.ndarray
    I: np.ndarray
    J: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    S: np.ndarray
    lam: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def distributions(self) -> np.ndarray:
        """(T+1, N) matrix of per-round sampling probabilities."""
        b = self.budgets.T
        return b / b.sum(1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "phi": self.phi.tolist(),
            "rewards": self.rewards.tolist(),
            "initial_budgets": self.rho0.tolist(),
            "budgets": self.budgets.tolist(),
            "alphas": self.alphas.tolist(),
            "diagnostics": self.diagnostics,
        }


def _round_residual(pop: _Population, a, phi, R, t) -> tuple[float, float]:
    """Server first-order residual at round t and the FOC minimizer under the current profile."""
    cfg = pop.cfg
    G, _, _, _ = pop.reward_response(a, phi, R)
    rho = pop.forward(a, phi)
    c = cfg.cost_weights(t + 1)
    g = G[:, t]
    # anchor the linear response at the realised budgets; this equals the
    # closed-form intercept wherever alpha^{t-1} is interior
    hh = rho[:, t] - g * R[t]
    w = cfg.server_weights(rho[:, t], phi[t])
    res = reward_cost_derivative(R[t], g, hh, c, cfg.gamma, w)
    Rstar = optimal_reward(t + 1, g, hh, cfg.gamma, cfg.theta, cfg.datasizes, cfg.accuracy_scale, w)
    return res, Rstar


def mean_field_fixed_point(
    cfg: GameConfig,
    rho0=None,
    R0=None,
    alpha0: float = 0.5,
    reward_tol: float = 1e-10,
    basin_tol: float = 1e-8,
    max_basin_moves: int = 10,
    verbose: bool = False,
) -> GameSolution:
    """Solve for the mean field phi(t), the clients' alphas and the rewards.

    One outer iteration sweeps t = 1..T. At each round the clients best
    respond to (phi, R), phi(t) is reset to the population mean and R_t is
    moved toward the root of the server's first-order condition (first step
    straight to the minimizer, then secant steps), repeating until both settle.
    Round 0 budgets are fixed by the initial draw, so R_0 cannot influence
    anything and its optimal value is 0. The outer loop stops once
    max_t |phi(t) - mean_i rho_i^t| <= eps0.
    """
    N, T = cfg.N, cfg.T
    rho0 = initial_budgets(cfg) if rho0 is None else np.asarray(rho0, dtype=float)
    if rho0.shape != (N,) or np.any(rho0 < cfg.rho_low) or np.any(rho0 > cfg.rho_high):
        raise ValueError("initial budgets must have length N and lie in [rho_low, rho_high]")
    pop = _Population(cfg, rho0)
    R = np.ones(T + 1) if R0 is None else np.array(R0, dtype=float)
    if R.shape != (T + 1,):
        raise ValueError("initial rewards must have length T+1")
    R[0] = 0.0
    phi = np.full(T + 1, rho0.mean())
    a = np.full((N, T), float(alpha0))
    a, phi, R, trace, round_iters = _sweeps(pop, a, phi, R, reward_tol, verbose)
    # The client problem is not concave. A local best response can sit in the
    # wrong basin; move the worst such client to its better basin and resolve.
    moves = []
    for _ in range(max_basin_moves):
        gain, better = pop.grid_improvement(a, phi, R)
        i = int(np.argmax(gain))
        if gain[i] <= basin_tol:
            break
        moves.append(i)
        a[i] = better[i]
        a, phi, R, tr, ri = _sweeps(pop, a, phi, R, reward_tol, verbose)
        trace += tr
        round_iters += ri
        if len(trace) > cfg.max_outer_iters:
            raise NonConvergenceError(
                f"mean field did not converge within {cfg.max_outer_iters} outer iterations", trace
            )

    a, pgn, _ = pop.best_response(a, phi, R)
    rho, alpha, p, Q, M, S, lam = pop.costate(a, phi, R)
    G, H, I, J = pop.reward_response(a, phi, R)
    reward_res = 0.0
    for t in range(1, T + 1):
        _, Rstar = _round_residual(pop, a, phi, R, t)
        reward_res = max(reward_res, abs(R[t] - Rstar) / (1.0 + Rstar))
    free = alpha[:, :T]
    diagnostics = {
        "outer_iterations": len(trace),
        "residual_trace": trace,
        "final_residual": trace[-1],
        "round_iterations": round_iters,
        "best_response_gradient": pgn,
        "basin_moves": moves,
        "reward_residual": float(reward_res),
        "contraction_estimate": contraction_estimate(free, cfg.rho_low, cfg.rho_high),
    }
    return GameSolution(cfg, phi.copy(), rho, alpha, R.copy(), rho0, G, H, I, J, Q, M, S, lam, diagnostics)


def _sweeps(pop, a, phi, R, reward_tol, verbose):
    cfg = pop.cfg
    T = cfg.T
    trace: list[float] = []
    round_iters: list[list[int]] = []
    for m in range(cfg.max_outer_iters):
        counts = []
        for t in range(1, T + 1):
            prev = None
            for k in range(cfg.max_round_iters):
                a, _, _ = pop.best_response(a, phi, R)
                rho = pop.forward(a, phi)
                new = rho[:, t].mean()
                dphi = abs(new - phi[t])
                phi[t] = new
                h, Rstar = _round_residual(pop, a, phi, R, t)
                if prev is None or h == prev[1]:
                    Rn = Rstar
                else:
                    Rn = R[t] - h * (R[t] - prev[0]) / (h - prev[1])
                Rn = max(Rn, 0.0)
                prev = (R[t], h)
                dR = abs(Rn - R[t])
                R[t] = Rn
                if dphi <= cfg.eps0 and dR <= reward_tol * (1.0 + R[t]):
                    break
            counts.append(k + 1)
        round_iters.append(counts)
        a, _, _ = pop.best_response(a, phi, R)
        rho = pop.forward(a, phi)
        res = float(np.abs(rho.mean(0) - phi).max())
        trace.append(res)
        if verbose:
            print(f"outer {m + 1}: residual {res:.3g}, max round iters {max(counts)}", flush=True)
        if res <= cfg.eps0:
            break
    else:
        raise NonConvergenceError(
            f"mean field did not converge within {cfg.max_outer_iters} outer iterations", trace
        )

    return a, phi, R, trace, round_iters


def solve_game(cfg: GameConfig, **kw) -> GameSolution:
    return mean_field_fixed_point(cfg, initial_budgets(cfg), **kw)


def contraction_estimate(alphas, rho_low: float, rho_high: float) -> float:
    """sqrt(nu) = max(|aL rL - aH rH|, |aH rL - aL rH|) / |rL - rH| over the played alphas."""
    aL, aH = float(np.min(alphas)), float(np.max(alphas))
    span = abs(rho_low - rho_high)
    return max(abs(aL * rho_low - aH * rho_high), abs(aH * rho_low - aL * rho_high)) / span


# ---------------------------------------------------------------- equilibrium check


@dataclass
class DeviationReport:
    client_gain: np.ndarray  # best relative gain per client
    server_gain: np.ndarray  # best relative cost reduction per round (index t)
    worst_client_gain: float
    worst_server_gain: float

    def to_dict(self) -> dict:
        return {
            "worst_client_gain": self.worst_client_gain,
            "worst_server_gain": self.worst_server_gain,
            "client_gain": self.client_gain.tolist(),
            "server_gain": self.server_gain.tolist(),
        }


def verify_sne(
    sol: GameSolution, grid_points: int = 50, probes=(1e-3, 1e-2, 1e-1), alphas=None
) -> DeviationReport:
    """Measure the best unilateral deviation gain of every player.

    Clients: alpha_i^t is replaced by each grid value in [0, 1 - alpha_clamp]
    (one round at a time, others fixed) and the client's own budgets are
    re-propagated. Server: R_t is moved over a grid and by relative probes,
    with budgets responding linearly, rho = rho* + G (R - R*). ``alphas`` overrides the
    solved profile (used for corrupted-profile checks).
    """
    cfg = sol.cfg
    N, T = cfg.N, cfg.T
    pop = _Population(cfg, sol.rho0)
    a = (sol.alphas if alphas is None else np.asarray(alphas, dtype=float))[:, :T]
    phi, R = sol.phi, sol.rewards
    U0 = pop.utilities(a, phi, R)
    grid = np.linspace(0.0, cfg.alpha_max, grid_points)
    best = U0.copy()
    rows = np.repeat(np.arange(N), grid_points)
    for t in range(T):
        trial = np.repeat(a, grid_points, axis=0)
        trial[:, t] = np.tile(grid, N)
        Ut = pop.utilities(trial, phi, R, rows).reshape(N, grid_points)
        best = np.maximum(best, Ut.max(1))
    client_gain = (best - U0) / np.maximum(np.abs(U0), 1e-300)

    server_gain = np.zeros(T + 1)
    for t in range(1, T + 1):
        Rt = R[t]
        g = sol.G[:, t]
        hh = sol.budgets[:, t] - g * Rt
        c = cfg.cost_weights(t + 1)
        wt = cfg.server_weights(sol.budgets[:, t], phi[t])
        lo = 0.0
        need = (g > 0) & (hh <= 0)
        if need.any():
            lo = float(np.max(-hh[need] / g[need]))
        cand = np.concatenate([
            np.linspace(lo, 2 * Rt + 1.0, grid_points),
            Rt * (1 + np.asarray(probes)),
            Rt * (1 - np.asarray(probes)),
        ])
        cand = cand[cand >= lo]
        r = np.outer(cand, g) + hh
        ok = np.all(r > 0, axis=1)
        cost = (wt * (c / r[ok] + (1 - cfg.gamma) * cand[ok, None] * r[ok])).sum(1)
        r0 = g * Rt + hh
        base = float(np.sum(wt * (c / r0 + (1 - cfg.gamma) * Rt * r0)))
        server_gain[t] = max(0.0, (base - cost.min()) / abs(base)) if cost.size else 0.0
    return DeviationReport(client_gain, server_gain, float(client_gain.max()), float(server_gain.max()))
