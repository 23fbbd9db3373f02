"""Log-log slope fits for convergence studies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateFit

MIN_POINTS = 4


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    ci_low: float
    ci_high: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "ci95": [self.ci_low, self.ci_high],
            "n_points": self.n_points,
        }


def fit_slope(eps, errors, min_points: int = MIN_POINTS) -> SlopeFit:
    """Least-squares line through (log eps, log error).

    Raises DegenerateFit when fewer than ``min_points`` pairs are given or an
    error is not strictly positive (its logarithm would be meaningless).
    """
    x = np.asarray(eps, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.shape != y.shape or x.size < min_points:
        raise DegenerateFit(f"need at least {min_points} (eps, error) pairs, got {x.size}")
    bad = ~(y > np.finfo(float).tiny) | ~np.isfinite(y)
    if bad.any():
        raise DegenerateFit(f"errors at eps={x[bad].tolist()} are not positive and finite")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 1.0
    if x.size > 2:
        t = stats.t.ppf(0.975, x.size - 2)
        half = float(t * res.stderr)
    else:
        half = 0.0
    return SlopeFit(float(res.slope), float(res.intercept), r2, float(res.slope) - half, float(res.slope) + half, int(x.size))
