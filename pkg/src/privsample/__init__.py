"""Privacy-aware client sampling for federated learning.

Game solver, zCDP noise calibration, sampling, welfare analysis, the
adaptive sampling-ratio extension and a small synthetic FL simulator.
"""

from __future__ import annotations

__version__ = "0.1.0"
SCHEMA_VERSION = 1
