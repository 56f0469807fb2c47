"""Privacy-aware sampling distributions and client subset draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WITH_REPLACEMENT = "with-replacement"
WITHOUT_REPLACEMENT = "without-replacement"
MODES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)


@dataclass(frozen=True)
class SamplingDistribution:
    probs: np.ndarray
    round: int = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("sampling distribution needs a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def N(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class SampledSubset:
    members: np.ndarray  # draw order; duplicates kept for with-replacement
    K: int
    mode: str

    def counts(self, N: int) -> np.ndarray:
        return np.bincount(self.members, minlength=N)


def _normalize(w: np.ndarray) -> np.ndarray:
    p = w / w.sum()
    # push the rounding residue onto the largest entry so the sum is exact
    p[np.argmax(p)] += 1.0 - p.sum()
    return p


def sampling_distribution(budgets, round: int = 0) -> SamplingDistribution:
    """x_i = rho_i / sum_j rho_j."""
    b = np.asarray(budgets, dtype=float)
    if b.size == 0:
        raise ValueError("empty budget vector")
    if np.any(b <= 0):
        raise ValueError("budgets must be positive")
    return SamplingDistribution(_normalize(b), round)


def probability_bounds(N: int, rho_low: float, rho_high: float) -> tuple[float, float]:
    """Range any x_i can take when every budget lies in [rho_low, rho_high]."""
    lo = rho_low / ((N - 1) * rho_high + rho_low)
    hi = rho_high / ((N - 1) * rho_low + rho_high)
    return lo, hi


def inclusion_probability(x, K: int):
    """Chance of appearing at least once in K independent draws, 1 - (1 - x)^K."""
    return 1.0 - (1.0 - np.asarray(x, dtype=float)) ** K


def sample_clients(
    dist: SamplingDistribution, K: int, mode: str, rng: np.random.Generator
) -> SampledSubset:
    """Draw K clients.

    Without replacement uses numpy's weighted ``choice``, which keeps the first
    occurrences of an i.i.d. stream and so realises the sequential
    renormalized (Plackett-Luce) scheme.
    """
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if K < 1:
        raise ValueError("K must be >= 1")
    if mode == WITHOUT_REPLACEMENT:
        if K > dist.N:
            raise ValueError(f"cannot draw K={K} distinct clients out of N={dist.N}")
        members = rng.choice(dist.N, size=K, replace=False, p=dist.probs)
    else:
        members = rng.choice(dist.N, size=K, replace=True, p=dist.probs)
    return SampledSubset(np.asarray(members, dtype=np.int64), K, mode)


def ipw_weights(subset: SampledSubset, dist: SamplingDistribution, theta) -> np.ndarray:
    """Per-client aggregation weight sum over draws of theta_i / (K x_i).

    Returned as a length-N vector (zero for clients not drawn) so callers can
    reduce in client-index order.
    """
    theta = np.asarray(theta, dtype=float)
    x = dist.probs
    drawn = subset.counts(dist.N)
    if np.any(x[drawn > 0] <= 0):
        raise AssertionError("sampled a client with zero probability")
    w = np.zeros(dist.N)
    m = drawn > 0
    w[m] = drawn[m] * theta[m] / (subset.K * x[m])
    return w
