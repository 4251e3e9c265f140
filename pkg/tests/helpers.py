"""Shared test oracles, independent of the library's sampling paths."""

from __future__ import annotations

import numpy as np
from scipy.stats import gaussian_kde


def mc_se(draws: np.ndarray) -> float:
    """Standard error of the Monte Carlo mean of ``draws``."""
    return float(np.std(draws, ddof=1) / np.sqrt(len(draws)))


def grid_density(logpdf_unnorm, grid: np.ndarray) -> np.ndarray:
    """Normalized density on a grid from an unnormalized log pdf."""
    logp = np.array([logpdf_unnorm(x) for x in grid], dtype=float)
    logp -= logp.max()
    dens = np.exp(logp)
    dens /= np.trapezoid(dens, grid)
    return dens


def tv_draws_vs_density(draws: np.ndarray, logpdf_unnorm, grid: np.ndarray) -> float:
    """Total variation (0..1) between a sample KDE and an exact grid density."""
    dens = grid_density(logpdf_unnorm, grid)
    kde = gaussian_kde(draws)(grid)
    kde /= np.trapezoid(kde, grid)
    return 0.5 * float(np.trapezoid(np.abs(kde - dens), grid))


def tv_draws_vs_draws(a: np.ndarray, b: np.ndarray, n_grid: int = 1024) -> float:
    """Total variation between two sample sets via independent KDEs."""
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    pad = 0.2 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, n_grid)
    fa = gaussian_kde(a)(grid)
    fb = gaussian_kde(b)(grid)
    fa /= np.trapezoid(fa, grid)
    fb /= np.trapezoid(fb, grid)
    return 0.5 * float(np.trapezoid(np.abs(fa - fb), grid))
