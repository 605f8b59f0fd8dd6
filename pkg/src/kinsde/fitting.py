"""Log-log rate fitting shared by the experiment harness and rate checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RateFitResult", "fit_loglog", "MAX_RELATIVE_STDERR"]

# Points whose Monte Carlo stderr exceeds this fraction of the error are
# unresolved and never enter a fit.
MAX_RELATIVE_STDERR = 0.3


@dataclass(frozen=True)
class RateFitResult:
    """Weighted least-squares fit of log(error) against log(n)."""

    slope: float
    intercept: float
    stderr_slope: float
    per_n_errors: list[tuple[int, float, float]]
    excluded: list[int] = field(default_factory=list)
    status: str = "ok"  # "ok" | "exact" | "inconclusive"

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr_slope": self.stderr_slope,
            "per_n_errors": [list(row) for row in self.per_n_errors],
            "excluded": list(self.excluded),
            "status": self.status,
        }


def fit_loglog(points: list[tuple[int, float, float]]) -> RateFitResult:
    """Fit log(error) = slope * log(n) + intercept by weighted least squares.

    ``points`` holds (n, error, stderr) rows. Weights come from the relative
    stderr via the delta method sd(log err) ~ stderr / err; rows with
    stderr / err > 0.3 are excluded up front, rows with error <= 0 are
    excluded as unresolvable. Needs >= 3 usable points. When every stderr
    is zero the fit is ordinary least squares and the slope uncertainty is
    estimated from the residuals.
    """
    usable = []
    excluded = []
    for n, err, stderr in points:
        if err <= 0 or not math.isfinite(err):
            excluded.append(n)
        elif stderr > MAX_RELATIVE_STDERR * err:
            excluded.append(n)
        else:
            usable.append((n, err, stderr))
    if len(usable) < 3:
        raise ValueError(
            f"need >= 3 usable points for a rate fit, have {len(usable)} "
            f"(excluded: {excluded})")

    x = np.log([n for n, _, _ in usable])
    y = np.log([err for _, err, _ in usable])
    rel = np.array([stderr / err for _, err, stderr in usable])

    if np.all(rel == 0.0):
        w = np.ones_like(x)
        known_variance = False
    else:
        # Guard tiny stderrs so a single near-exact point cannot dominate.
        w = 1.0 / np.maximum(rel, 1e-6) ** 2
        known_variance = True

    wsum = w.sum()
    xbar = float((w * x).sum() / wsum)
    ybar = float((w * y).sum() / wsum)
    sxx = float((w * (x - xbar) ** 2).sum())
    slope = float((w * (x - xbar) * (y - ybar)).sum() / sxx)
    intercept = ybar - slope * xbar

    if known_variance:
        stderr_slope = math.sqrt(1.0 / sxx)
    else:
        resid = y - (slope * x + intercept)
        dof = len(usable) - 2
        if dof > 0 and float(np.abs(resid).max()) > 1e-13:
            stderr_slope = math.sqrt(float((resid**2).sum()) / dof / sxx)
        else:
            stderr_slope = 0.0

    return RateFitResult(slope, intercept, stderr_slope,
                         [(n, err, stderr) for n, err, stderr in usable],
                         excluded=excluded)
