"""Baseline sampling strategies for paired comparison runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fltrain import FLRunRecord, run_fl
from .game import GameSolution
from .sampling import SamplingDistribution, _normalize

PRIVACY_AWARE = "privacy-aware"
RANDOM = "random"
GRADIENT_NORM = "gradient-norm"
FED_CBS = "fed-cbs"
DELTA = "delta"
KINDS = (PRIVACY_AWARE, RANDOM, GRADIENT_NORM, FED_CBS, DELTA)
ALIASES = {"fedpcs": PRIVACY_AWARE, "aocs": GRADIENT_NORM}


def random_distribution(N: int) -> SamplingDistribution:
    if N < 1:
        raise ValueError("N must be >= 1")
    return SamplingDistribution(np.full(N, 1.0 / N))


@dataclass(frozen=True)
class NormDistribution:
    dist: SamplingDistribution
    fallback: bool  # every gradient was zero, uniform returned


def gradient_norm_distribution(gradients) -> NormDistribution:
    """Probabilities proportional to per-client gradient l2 norms."""
    g = np.asarray(gradients, dtype=float)
    norms = np.linalg.norm(g.reshape(g.shape[0], -1), axis=1)
    if not np.any(norms > 0):
        return NormDistribution(random_distribution(g.shape[0]), True)
    return NormDistribution(SamplingDistribution(_normalize(norms)), False)


@dataclass(frozen=True)
class SamplingStrategy:
    """A comparison arm.

    ``random_budgets`` picks the budgets of the random arm: "floor" puts every
    client at rho_low, the worst equilibrium under uniform sampling; "matched"
    reuses the solved budgets.
    """

    kind: str
    random_budgets: str = "floor"

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.random_budgets not in ("floor", "matched"):
            raise ValueError("random_budgets must be 'floor' or 'matched'")
        object.__setattr__(self, "kind", kind)

    def budgets(self, sol: GameSolution) -> np.ndarray:
        if self.kind == RANDOM and self.random_budgets == "floor":
            return np.full_like(sol.budgets, sol.cfg.rho_low)
        return sol.budgets

    def distributions(self, sol: GameSolution, task=None) -> np.ndarray:
        """(T, N) probabilities for the training rounds."""
        cfg = sol.cfg
        if self.kind in (FED_CBS, DELTA):
            raise NotImplementedError(f"{self.kind} sampling is not implemented")
        if self.kind == PRIVACY_AWARE:
            return sol.distributions[:-1]
        if self.kind == RANDOM:
            return np.tile(random_distribution(cfg.N).probs, (cfg.T, 1))
        if task is None:
            raise ValueError("gradient-norm sampling needs a task")
        # norms at the shared initial model; the strategy is static per run
        g = np.array([task.local_grad(i, np.zeros(task.d)) for i in range(task.N)])
        return np.tile(gradient_norm_distribution(g).dist.probs, (cfg.T, 1))

    def run(self, sol: GameSolution, task, seed: int, lr: float, **kw) -> FLRunRecord:
        return run_fl(task, self.budgets(sol), self.distributions(sol, task), sol.cfg.K, lr, seed,
                      clip=sol.cfg.clip, rewards=sol.rewards, strategy=self.kind, **kw)
