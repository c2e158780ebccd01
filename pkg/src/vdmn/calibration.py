"""Graphical calibration test for predicted marginal distributions.

Each marginal of every prediction whitens its observation into a z-score.
The empirical CDF of the z-scores' probability integral transform is compared
against the uniform CDF with a simulated 95% confidence envelope following
Säilynoja, Bürkner and Vehtari (2022), which adjusts the pointwise level so
the band holds simultaneously over all evaluation points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .riemann import GaussianStiffness, vec

__all__ = ["MARGINALS", "MarginalCalibration", "CalibrationReport", "calibration_test", "envelope"]

# name -> index into the distinct-entry coordinates (11, 22, 33, 12, 13, 23)
MARGINALS = {"C11": 0, "C12": 3, "C22": 1, "C33": 2}


@dataclass
class MarginalCalibration:
    name: str
    z: np.ndarray
    rank: np.ndarray
    pit: np.ndarray
    grid: np.ndarray
    ecdf: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all((self.ecdf >= self.lower) & (self.ecdf <= self.upper)))

    def to_rows(self):
        for g, f, lo, hi in zip(self.grid, self.ecdf, self.lower, self.upper):
            yield self.name, g, f, lo, hi


@dataclass
class CalibrationReport:
    marginals: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    level: float = 0.95

    @property
    def passed(self) -> bool:
        return bool(self.marginals) and all(m.passed for m in self.marginals.values())

    def summary(self) -> str:
        parts = [f"{k}: {'pass' if m.passed else 'FAIL'}" for k, m in self.marginals.items()]
        parts += [f"{k}: skipped" for k in self.skipped]
        return ", ".join(parts)


def _ecdf_on_grid(u, grid):
    u = np.sort(u, axis=-1)
    return np.stack([np.searchsorted(row, grid, side="right") for row in u.reshape(-1, u.shape[-1])]).reshape(
        u.shape[:-1] + grid.shape
    ) / u.shape[-1]


def envelope(n: int, n_sim: int = 1000, level: float = 0.95, seed=None, simultaneous: bool = True):
    """Lower/upper ECDF bounds at grid ``k/n`` for ``n`` uniform PIT values."""
    grid = np.arange(1, n + 1) / n
    rng = np.random.default_rng(seed)
    sims = _ecdf_on_grid(rng.random((n_sim, n)), grid)
    alpha = 1.0 - level
    if not simultaneous:
        lo, hi = np.quantile(sims, [alpha / 2, 1 - alpha / 2], axis=0)
        return grid, lo, hi
    k = np.rint(sims * n)
    p_lo = stats.binom.cdf(k, n, grid)
    p_hi = stats.binom.sf(k - 1, n, grid)
    tail = np.minimum(1.0, 2.0 * np.minimum(p_lo, p_hi))
    gamma = np.quantile(tail.min(axis=1), alpha)
    lo = stats.binom.ppf(gamma / 2, n, grid) / n
    hi = stats.binom.ppf(1 - gamma / 2, n, grid) / n
    return grid, lo, hi


def calibration_test(predicted, observed, n_sim: int = 1000, level: float = 0.95, seed=0,
                     marginals=MARGINALS, simultaneous: bool = True) -> CalibrationReport:
    """Test whether observations are consistent with predicted marginals.

    Parameters
    ----------
    predicted : list of GaussianStiffness or tuple (means, covs)
        Means ``(N, 3, 3)`` and 6x6 covariances ``(N, 6, 6)``.
    observed : array_like, shape (N, 3, 3)
    """
    if isinstance(predicted, tuple):
        means, covs = (np.asarray(a, dtype=float) for a in predicted)
    else:
        means = np.array([g.mean for g in predicted])
        covs = np.array([g.cov for g in predicted])
    observed = np.asarray(observed, dtype=float)
    n = len(observed)
    if len(means) != n:
        raise ValueError("predicted and observed lists differ in length")
    if n < 20:
        raise ValueError("calibration test needs at least 20 samples")
    resid = vec(observed) - vec(means)
    report = CalibrationReport(level=level)
    grid, lo, hi = envelope(n, n_sim, level, seed, simultaneous)
    for name, p in marginals.items():
        var = covs[:, p, p]
        if np.any(var <= 0):
            warnings.warn(f"marginal {name} has nonpositive predicted variance; skipped", RuntimeWarning)
            report.skipped.append(name)
            continue
        z = resid[:, p] / np.sqrt(var)
        rank = np.array([np.mean(z <= zl) for zl in z])
        pit = stats.norm.cdf(z)
        ecdf = _ecdf_on_grid(pit, grid)
        report.marginals[name] = MarginalCalibration(name, z, rank, pit, grid, ecdf, lo, hi)
    return report
