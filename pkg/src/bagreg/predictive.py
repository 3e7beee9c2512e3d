"""Predictive label distributions emitted by every model.

Kinds:

* "gaussian"  -- N(mean, variance); the shrinkage and BLR predictives.
* "mixture"   -- uniform-weight mixture of Gaussians, one component per
                 posterior draw; log densities use log-mean-exp.
* "bernoulli" -- classification; prob = Pr(y = 1).
* "point"     -- deterministic prediction (baseline network); no density.
* "grid"      -- density tabulated on a label grid (the synthetic-data
                 oracle's posterior, which is visibly non-Gaussian near the
                 label-range boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_logpdf(y, mean, variance):
    return -0.5 * (LOG_2PI + np.log(variance) + (y - mean) ** 2 / variance)


@dataclass(frozen=True)
class PredictiveDistribution:
    kind: str
    mean: float
    variance: Optional[float] = None
    prob: Optional[float] = None
    components: Optional[np.ndarray] = None  # (T, 2) rows (mean, variance)
    grid_y: Optional[np.ndarray] = None
    grid_density: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "mixture", "bernoulli", "point", "grid"):
            raise InvalidArgumentError(f"unknown predictive kind {self.kind!r}")
        if self.kind in ("gaussian", "mixture") and not (
            self.variance is not None and self.variance > 0
        ):
            raise InvalidArgumentError("variance must be positive")
        if self.kind == "bernoulli" and not (0.0 <= self.prob <= 1.0):
            raise InvalidArgumentError("prob must lie in [0, 1]")
        if self.kind == "mixture" and (self.components is None or len(self.components) == 0):
            raise InvalidArgumentError("mixture needs at least one component")

    @property
    def sd(self) -> Optional[float]:
        return None if self.variance is None else math.sqrt(self.variance)

    def logpdf(self, y: float) -> float:
        """Log predictive density (log probability mass for "bernoulli")."""
        if self.kind == "gaussian":
            return float(gaussian_logpdf(y, self.mean, self.variance))
        if self.kind == "mixture":
            comp = self.components
            lps = gaussian_logpdf(y, comp[:, 0], comp[:, 1])
            m = np.max(lps)
            return float(m + np.log(np.mean(np.exp(lps - m))))
        if self.kind == "bernoulli":
            p = min(max(self.prob, 1e-12), 1.0 - 1e-12)
            return float(math.log(p) if y == 1 else math.log1p(-p))
        if self.kind == "grid":
            dens = float(np.interp(y, self.grid_y, self.grid_density, left=0.0, right=0.0))
            return float(np.log(max(dens, 1e-300)))
        raise InvalidArgumentError("point predictions carry no density")


def gaussian_predictive(mean: float, variance: float) -> PredictiveDistribution:
    return PredictiveDistribution(kind="gaussian", mean=float(mean), variance=float(variance))


def point_predictive(mean: float) -> PredictiveDistribution:
    return PredictiveDistribution(kind="point", mean=float(mean))


def bernoulli_predictive(prob: float) -> PredictiveDistribution:
    prob = float(prob)
    return PredictiveDistribution(
        kind="bernoulli", mean=prob, variance=prob * (1.0 - prob), prob=prob
    )


def mixture_predictive(components: np.ndarray) -> PredictiveDistribution:
    """Uniform mixture of Gaussian components given as (T, 2) rows (mean, variance)."""
    comp = np.atleast_2d(np.asarray(components, dtype=float))
    if comp.shape[1] != 2:
        raise InvalidArgumentError("components must be (T, 2) rows (mean, variance)")
    if np.any(comp[:, 1] <= 0):
        raise InvalidArgumentError("component variances must be positive")
    mean = float(np.mean(comp[:, 0]))
    second = float(np.mean(comp[:, 1] + comp[:, 0] ** 2))
    return PredictiveDistribution(
        kind="mixture",
        mean=mean,
        variance=max(second - mean**2, 1e-300),
        components=comp,
    )


def grid_predictive(grid_y: np.ndarray, grid_density: np.ndarray) -> PredictiveDistribution:
    """Predictive tabulated as a normalized density on a label grid."""
    grid_y = np.asarray(grid_y, dtype=float)
    dens = np.asarray(grid_density, dtype=float)
    if grid_y.ndim != 1 or grid_y.shape != dens.shape or grid_y.size < 2:
        raise InvalidArgumentError("grid_y and grid_density must be equal-length 1-D arrays")
    if np.any(dens < 0):
        raise InvalidArgumentError("density must be nonnegative")
    z = float(np.trapezoid(dens, grid_y))
    if not (np.isfinite(z) and z > 0):
        raise InvalidArgumentError("density must have positive mass")
    dens = dens / z
    mean = float(np.trapezoid(dens * grid_y, grid_y))
    second = float(np.trapezoid(dens * grid_y**2, grid_y))
    return PredictiveDistribution(
        kind="grid",
        mean=mean,
        variance=max(second - mean**2, 1e-300),
        grid_y=grid_y,
        grid_density=dens,
    )
