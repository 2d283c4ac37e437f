"""Log-distance path loss: RSS <-> distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ETA = 2.1


@dataclass(frozen=True)
class LdplParams:
    """Path-loss exponent, reference distance (m) and RSS at that distance (dBm)."""

    rss_at_d0: float
    eta: float = DEFAULT_ETA
    d0: float = 1.0

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.d0 > 0:
            raise ValueError(f"d0 must be > 0, got {self.d0}")


def ldpl_rss(params: LdplParams, d):
    """Expected RSS at distance ``d``. Accepts scalars or arrays."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(~(d_arr > 0)):
        raise ValueError("distance must be > 0")
    out = params.rss_at_d0 - 10.0 * params.eta * np.log10(d_arr / params.d0)
    return float(out) if out.ndim == 0 else out


def ldpl_distance(params: LdplParams, rss):
    """Distance at which the model predicts ``rss``. Inverse of :func:`ldpl_rss`."""
    rss_arr = np.asarray(rss, dtype=float)
    out = params.d0 * np.power(10.0, (params.rss_at_d0 - rss_arr) / (10.0 * params.eta))
    return float(out) if out.ndim == 0 else out


def max_range(params: LdplParams, threshold: float) -> float:
    """Largest distance whose noise-free RSS still reaches ``threshold``."""
    return float(ldpl_distance(params, threshold)) if math.isfinite(threshold) else math.inf
