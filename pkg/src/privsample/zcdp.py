"""Gaussian perturbation calibrated to rho-zCDP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSpec:
    variance: float
    dimension: int
    clip: float

    def __post_init__(self):
        if self.variance < 0 or self.dimension < 1 or self.clip <= 0:
            raise ValueError(f"invalid noise spec {self}")

    @classmethod
    def for_budget(cls, budget: float, datasize: int, clip: float, dimension: int) -> "NoiseSpec":
        return cls(noise_variance(budget, datasize, clip), dimension, clip)


def sensitivity(datasize: int, clip: float) -> float:
    """L2 sensitivity of the averaged local parameter, 2W/|D|."""
    return 2.0 * clip / datasize


def noise_variance(budget: float, datasize: int, clip: float) -> float:
    """Per-coordinate Gaussian variance 2 W^2 / (rho |D|^2)."""
    if not budget > 0:
        raise ValueError(f"privacy budget must be positive, got {budget}")
    if datasize < 1:
        raise ValueError(f"datasize must be >= 1, got {datasize}")
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip}")
    return 2.0 * clip * clip / (budget * datasize * datasize)


def perturb_gradient(gradient: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, spec.variance) noise to every coordinate.

    Draws use numpy's ziggurat normal sampler on the supplied stream, so the
    output is a deterministic function of the stream state.
    """
    g = np.asarray(gradient, dtype=float)
    if g.shape != (spec.dimension,):
        raise ValueError(f"gradient shape {g.shape} does not match dimension {spec.dimension}")
    if spec.variance == 0:
        return g.copy()
    return g + rng.normal(0.0, np.sqrt(spec.variance), size=spec.dimension)


def clip_norm(params: np.ndarray, clip: float) -> np.ndarray:
    """Project onto the L2 ball of radius ``clip``."""
    v = np.asarray(params, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm <= clip:
        return v.copy()
    return v * (clip / nrm)
