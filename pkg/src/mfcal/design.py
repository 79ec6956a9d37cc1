"""Random Latin hypercube designs on the unit cube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class DesignMatrix:
    """An n x d design where every column hits each stratum [k/n, (k+1)/n) once."""

    points: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def lhs(n: int, d: int, rng_seed: int = 0) -> DesignMatrix:
    """Draw a random Latin hypercube sample.

    Each column independently permutes the n strata and jitters uniformly
    within each stratum, so one-dimensional projections are exactly
    stratified.  Deterministic for a given seed.
    """
    if n < 1 or d < 1:
        raise DimensionError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(rng_seed)
    pts = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        pts[:, j] = (perm + rng.uniform(size=n)) / n
    return DesignMatrix(points=pts, seed=int(rng_seed))


def lhs_points(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube draw from an existing generator (no seed bookkeeping)."""
    if n < 1 or d < 1:
        raise DimensionError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    pts = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        pts[:, j] = (perm + rng.uniform(size=n)) / n
    return pts
