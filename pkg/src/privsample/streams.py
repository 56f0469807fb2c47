"""Splittable seeded random streams.

Every random draw in the package goes through ``stream(seed, *keys)`` so that
a (seed, client, round, replicate) tuple always maps to the same generator,
independent of call order or parallel schedule.
"""

from __future__ import annotations

import numpy as np

# fixed tags keep unrelated consumers of the same seed apart
TAG_INIT = 1
TAG_TASK = 2
TAG_SAMPLE = 3
TAG_NOISE = 4
TAG_BATCH = 5


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator keyed by ``seed`` and an integer spawn path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
