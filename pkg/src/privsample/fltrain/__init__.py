"""Desk-scale federated training on synthetic convex tasks.

Each round the server draws a client subset, every drawn client computes a
local gradient at the broadcast model, adds zCDP-calibrated Gaussian noise and
uploads it, and the server takes an inverse-probability weighted step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .. import streams
from ..sampling import (
    WITHOUT_REPLACEMENT,
    SampledSubset,
    SamplingDistribution,
    ipw_weights,
    sample_clients,
)
from ..zcdp import NoiseSpec, clip_norm, noise_variance, perturb_gradient


@dataclass
class SyntheticTask:
    kind: str
    X: list
    y: list
    reg: float
    theta: np.ndarray
    w_star: np.ndarray
    F_star: float
    beta: float
    psi: float
    shared_optimum: bool = False

    @property
    def N(self) -> int:
        return len(self.X)

    @property
    def d(self) -> int:
        return self.X[0].shape[1]

    @property
    def mu(self) -> float:
        return self.psi

    @property
    def datasizes(self) -> np.ndarray:
        return np.array([x.shape[0] for x in self.X], dtype=float)

    def local_loss(self, i: int, w) -> float:
        X, y = self.X[i], self.y[i]
        z = X @ w
        if self.kind == "quadratic":
            base = 0.5 * np.mean((z - y) ** 2)
        else:
            base = np.mean(np.logaddexp(0.0, -y * z))
        return float(base + 0.5 * self.reg * (w @ w))

    def local_grad(self, i: int, w, idx=None) -> np.ndarray:
        X, y = self.X[i], self.y[i]
        if idx is not None:
            X, y = X[idx], y[idx]
        if X.shape[0] == 0:
            raise ValueError(f"client {i} has an empty dataset")
        z = X @ w
        if self.kind == "quadratic":
            r = z - y
        else:
            r = -y / (1.0 + np.exp(y * z))
        return X.T @ r / X.shape[0] + self.reg * w

    def loss(self, w) -> float:
        return float(sum(self.theta[i] * self.local_loss(i, w) for i in range(self.N)))

    def grad(self, w) -> np.ndarray:
        g = np.zeros(self.d)
        for i in range(self.N):
            g += self.theta[i] * self.local_grad(i, w)
        return g

    def local_hessian(self, i: int, w=None) -> np.ndarray:
        X = self.X[i]
        if self.kind == "quadratic":
            s = np.ones(X.shape[0])
        else:
            z = X @ (np.zeros(self.d) if w is None else w)
            s = 1.0 / (1.0 + np.exp(-z))
            s = s * (1 - s)
        return (X * s[:, None]).T @ X / X.shape[0] + self.reg * np.eye(self.d)


def _theta(N, theta):
    if theta is None:
        return np.full(N, 1.0 / N)
    t = np.asarray(theta, dtype=float)
    return t / t.sum()


def make_quadratic_task(
    N: int = 10,
    d: int = 5,
    samples: int = 50,
    shift: float = 0.5,
    reg: float = 0.1,
    feature_spread: float = 0.3,
    label_noise: float = 0.0,
    seed: int = 0,
    theta=None,
) -> SyntheticTask:
    """Least squares with per-client optima w_c + shift * z_i.

    With shift = 0, reg = 0 and no label noise every client shares the global
    optimum, which keeps the gradient-alignment constants bounded.
    """
    rng = streams.stream(seed, streams.TAG_TASK)
    w_c = 0.5 * rng.normal(size=d) / np.sqrt(d)
    X, y = [], []
    for _ in range(N):
        scale = np.exp(feature_spread * rng.normal(size=d))
        Xi = rng.normal(size=(samples, d)) * scale
        wi = w_c + shift * rng.normal(size=d)
        X.append(Xi)
        y.append(Xi @ wi + label_noise * rng.normal(size=samples))
    th = _theta(N, theta)
    A = sum(th[i] * X[i].T @ X[i] / samples for i in range(N)) + reg * np.eye(d)
    b = sum(th[i] * X[i].T @ y[i] / samples for i in range(N))
    w_star = np.linalg.solve(A, b)
    task = SyntheticTask("quadratic", X, y, reg, th, w_star, 0.0, 0.0, 0.0,
                         shared_optimum=(shift == 0 and reg == 0 and label_noise == 0))
    task.F_star = task.loss(w_star)
    # local smoothness is the largest local Hessian eigenvalue; strong convexity
    # comes from the global Hessian
    task.beta = max(float(np.linalg.eigvalsh(task.local_hessian(i))[-1]) for i in range(N))
    task.psi = float(np.linalg.eigvalsh(A)[0])
    return task


def make_logistic_task(
    N: int = 10,
    d: int = 5,
    samples: int = 50,
    separation: float = 1.0,
    shift: float = 0.5,
    reg: float = 0.1,
    seed: int = 0,
    theta=None,
) -> SyntheticTask:
    """Binary logistic regression on a two-component Gaussian mixture per client."""
    rng = streams.stream(seed, streams.TAG_TASK)
    mu = rng.normal(size=d)
    mu *= separation / np.linalg.norm(mu)
    X, y = [], []
    for _ in range(N):
        labels = rng.choice([-1.0, 1.0], size=samples)
        center = shift * rng.normal(size=d)
        Xi = labels[:, None] * mu + center + rng.normal(size=(samples, d))
        X.append(Xi)
        y.append(labels)
    th = _theta(N, theta)
    task = SyntheticTask("logistic", X, y, reg, th, np.zeros(d), 0.0, 0.0, reg)
    res = minimize(task.loss, np.zeros(d), jac=task.grad, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10000})
    w = res.x
    # finish with full-batch Newton steps for a tight optimum
    for _ in range(20):
        Hs = sum(th[i] * task.local_hessian(i, w) for i in range(N))
        w = w - np.linalg.solve(Hs, task.grad(w))
    task.w_star = w
    task.F_star = task.loss(w)
    # sigmoid' <= 1/4 bounds the curvature everywhere
    task.beta = max(
        float(np.linalg.eigvalsh(X[i].T @ X[i] / samples)[-1]) / 4 + reg for i in range(N)
    )
    task.psi = reg
    return task


# ---------------------------------------------------------------- training


def local_sgd(task: SyntheticTask, i: int, model, lr: float, epochs: int = 1, batch=None, rng=None):
    """Gradient estimate uploaded by client i.

    One full-batch epoch returns the exact local gradient at ``model``. With
    several local steps the pseudo-gradient (w_start - w_end) / lr is returned.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    n = task.X[i].shape[0]
    if n == 0:
        raise ValueError(f"client {i} has an empty dataset")
    b = n if batch is None else int(batch)
    w = np.array(model, dtype=float)
    start = w.copy()
    for _ in range(epochs):
        idx = None if b >= n else rng.choice(n, size=b, replace=False)
        g = task.local_grad(i, w, idx)
        if epochs == 1:
            return g
        w = w - lr * g
    return (start - w) / lr


def aggregate(model, grads, weights, lr: float) -> np.ndarray:
    """w - lr * sum_i weights_i * grads_i, reduced in ascending client index."""
    step = np.zeros_like(np.asarray(model, dtype=float))
    for i in np.nonzero(weights)[0]:
        step = step + weights[i] * grads[i]
    return np.asarray(model, dtype=float) - lr * step


def accuracy_loss_metric(budgets, theta, datasizes, t: int) -> float:
    """sum theta_i^2 / (t |D_i|^2 rho_i) over the given clients; t is the shifted round index."""
    if t < 1:
        raise ValueError("pass the shifted round index t >= 1")
    b = np.asarray(budgets, dtype=float)
    return float(np.sum(np.asarray(theta) ** 2 / (t * np.asarray(datasizes) ** 2 * b)))


@dataclass
class FLRunRecord:
    strategy: str
    seed: int
    loss: np.ndarray  # F(w(t)), t = 0..T
    grad_sq: np.ndarray  # ||grad F(w(t))||^2
    dist_sq: np.ndarray  # ||w(t) - w*||^2
    accuracy_metric: np.ndarray  # A over the round's drawn clients, t = 0..T-1
    members: list  # drawn client indices per round (draw order)
    probs: np.ndarray  # (T, N) sampling probabilities used
    noise_var: np.ndarray  # (T, N) per-coordinate noise variance of every client
    budgets: np.ndarray  # (N, T+1)
    rewards: np.ndarray | None = None
    flags: list = field(default_factory=list)
    models: np.ndarray | None = None  # (T+1, d) trajectory

    @property
    def T(self) -> int:
        return len(self.members)

    CSV_COLUMNS = ("t", "loss", "grad_sq", "dist_sq", "accuracy_metric", "members")

    def csv_rows(self) -> list[list]:
        rows = []
        for t in range(self.T + 1):
            acc = repr(float(self.accuracy_metric[t])) if t < self.T else ""
            mem = ";".join(str(int(m)) for m in self.members[t]) if t < self.T else ""
            rows.append([t, repr(float(self.loss[t])), repr(float(self.grad_sq[t])),
                         repr(float(self.dist_sq[t])), acc, mem])
        return rows

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "loss": self.loss.tolist(),
            "grad_sq": self.grad_sq.tolist(),
            "dist_sq": self.dist_sq.tolist(),
            "accuracy_metric": self.accuracy_metric.tolist(),
            "members": [[int(m) for m in ms] for ms in self.members],
            "flags": list(self.flags),
        }


def train_round(
    task: SyntheticTask,
    w,
    subset: SampledSubset,
    dist: SamplingDistribution,
    budgets_t,
    lr: float,
    t: int,
    seed: int,
    clip: float,
    clip_params: bool = True,
    local_epochs: int = 1,
    batch=None,
):
    """One aggregation round; returns the new model and per-client noise variances."""
    N, d = task.N, task.d
    grads = np.zeros((N, d))
    var = np.array([noise_variance(budgets_t[i], int(task.datasizes[i]), clip) for i in range(N)])
    for i in np.unique(subset.members):
        wl = clip_norm(w, clip) if clip_params else np.asarray(w, dtype=float)
        g = local_sgd(task, int(i), wl, lr, local_epochs, batch,
                      streams.stream(seed, streams.TAG_BATCH, int(i), t))
        spec = NoiseSpec(var[i], d, clip)
        grads[i] = perturb_gradient(g, spec, streams.stream(seed, streams.TAG_NOISE, int(i), t))
    weights = ipw_weights(subset, dist, task.theta)
    return aggregate(w, grads, weights, lr), var


def run_fl(
    task: SyntheticTask,
    budgets,
    probs,
    K,
    lr: float,
    seed: int,
    rounds: int | None = None,
    clip: float = 1.0,
    mode: str = WITHOUT_REPLACEMENT,
    clip_params: bool = True,
    local_epochs: int = 1,
    batch=None,
    w0=None,
    rewards=None,
    strategy: str = "",
    keep_models: bool = False,
) -> FLRunRecord:
    """Run T rounds with the given per-round budgets (N x (T+1)) and sampling probabilities."""
    budgets = np.asarray(budgets, dtype=float)
    probs = np.asarray(probs, dtype=float)
    T = budgets.shape[1] - 1 if rounds is None else int(rounds)
    if budgets.shape[0] != task.N or budgets.shape[1] < T:
        raise ValueError("budgets must be N x (T+1)")
    if probs.ndim == 1:
        probs = np.tile(probs, (T, 1))
    Ks = np.full(T, int(K)) if np.ndim(K) == 0 else np.asarray(K, dtype=int)
    w = np.zeros(task.d) if w0 is None else np.array(w0, dtype=float)
    loss, gsq, dsq = [task.loss(w)], [float(task.grad(w) @ task.grad(w))], [float((w - task.w_star) @ (w - task.w_star))]
    models = [w.copy()]
    acc, members, used, variances = [], [], [], []
    for t in range(T):
        dist = SamplingDistribution(probs[t], t)
        subset = sample_clients(dist, int(Ks[t]), mode, streams.stream(seed, streams.TAG_SAMPLE, t))
        w, var = train_round(task, w, subset, dist, budgets[:, t], lr, t, seed, clip,
                             clip_params, local_epochs, batch)
        drawn = np.unique(subset.members)
        acc.append(accuracy_loss_metric(budgets[drawn, t], task.theta[drawn], task.datasizes[drawn], t + 1))
        members.append(subset.members.copy())
        used.append(dist.probs)
        variances.append(var)
        g = task.grad(w)
        loss.append(task.loss(w))
        gsq.append(float(g @ g))
        dsq.append(float((w - task.w_star) @ (w - task.w_star)))
        models.append(w.copy())
    return FLRunRecord(
        strategy, seed, np.array(loss), np.array(gsq), np.array(dsq), np.array(acc), members,
        np.array(used), np.array(variances), budgets[:, : T + 1].copy(),
        None if rewards is None else np.asarray(rewards, dtype=float),
        models=np.array(models) if keep_models else None,
    )


def run_fedpcs(sol, task: SyntheticTask, seed: int, lr: float, **kw) -> FLRunRecord:
    """Alg. 2 style run: the solved budgets drive both sampling and noise."""
    if sol.cfg.N != task.N:
        raise ValueError("game and task disagree on N")
    return run_fl(task, sol.budgets, sol.distributions[:-1], sol.cfg.K, lr, seed,
                  clip=sol.cfg.clip, rewards=sol.rewards, strategy="fedpcs", **kw)
