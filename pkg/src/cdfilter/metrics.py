"""Evaluation quantities: estimation error, interval coverage, KDE-based
accuracy against an oracle sampler, prediction error, and the draws-until-
threshold notion of effective sample size."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricRow",
    "mse",
    "mspe",
    "interval_coverage",
    "accuracy_tv",
    "ess_until",
    "bootstrap_se",
]


@dataclass
class MetricRow:
    """One (time, metric, value, stderr) observation for tables and plots."""

    time: int
    metric: str
    value: float
    stderr: float = float("nan")


def mse(estimates, truth) -> float:
    """Mean squared deviation of point estimates from the truth."""
    estimates = np.asarray(estimates, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if estimates.size == 0:
        raise ValueError("mse of empty input")
    if estimates.shape != truth.shape:
        raise ValueError(f"length mismatch {estimates.shape} vs {truth.shape}")
    return float(np.mean((estimates - truth) ** 2))


def mspe(predictions, y_test) -> float:
    """Mean squared prediction error of the posterior-mean predictor."""
    return mse(predictions, y_test)


def interval_coverage(draws, truth, level: float = 0.95):
    """Empirical central credible intervals per parameter, checked at the truth.

    ``draws`` is (S, k) (or (S,)); returns (coverage, mean_length).  Fewer
    than 40 draws makes the tail quantiles unstable, which is flagged with a
    warning rather than an error.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    truth = np.asarray(truth, dtype=float).ravel()
    if draws.shape[1] != truth.shape[0]:
        raise ValueError(f"{draws.shape[1]} parameters vs {truth.shape[0]} truths")
    if draws.shape[0] < 40:
        warnings.warn(
            f"only {draws.shape[0]} draws per interval; quantiles are unstable",
            stacklevel=2,
        )
    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(draws, [alpha, 100.0 - alpha], axis=0)
    covered = (truth >= lo) & (truth <= hi)
    return float(np.mean(covered)), float(np.mean(hi - lo))


def _silverman_bandwidth(x: np.ndarray) -> float:
    sd = float(np.std(x))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    a = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * a * len(x) ** (-0.2)


def _kde_on_grid(x: np.ndarray, grid: np.ndarray, bw: float) -> np.ndarray:
    z = (grid[:, None] - x[None, :]) / bw
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * bw * math.sqrt(2.0 * math.pi))
    return dens


def accuracy_tv(draws_a, draws_b, n_grid: int = 512) -> float:
    """One minus half the integrated absolute difference of two Gaussian KDEs.

    Both samples get Silverman-rule bandwidths and share a grid spanning the
    pooled range padded by three pooled bandwidths; identical distributions
    score near 1, disjoint ones near 0.
    """
    a = np.asarray(draws_a, dtype=float).ravel()
    b = np.asarray(draws_b, dtype=float).ravel()
    if a.size < 100 or b.size < 100:
        raise ValueError("accuracy needs at least 100 draws per sample set")
    bw_a, bw_b = _silverman_bandwidth(a), _silverman_bandwidth(b)
    if bw_a <= 0.0 or bw_b <= 0.0:
        # at least one point mass
        if bw_a <= 0.0 and bw_b <= 0.0:
            return 1.0 if a[0] == b[0] else 0.0
        point = a[0] if bw_a <= 0.0 else b[0]
        other = b if bw_a <= 0.0 else a
        bw = _silverman_bandwidth(other)
        # overlap of the non-degenerate density's mass scale at the point
        dens = _kde_on_grid(other, np.array([point]), bw)[0]
        return float(np.clip(dens * bw * math.sqrt(2.0 * math.pi), 0.0, 1.0))
    pad = 3.0 * (bw_a + bw_b)
    lo = min(a.min(), b.min()) - pad
    hi = max(a.max(), b.max()) + pad
    grid = np.linspace(lo, hi, n_grid)
    fa = _kde_on_grid(a, grid, bw_a)
    fb = _kde_on_grid(b, grid, bw_b)
    tv = 0.5 * float(np.trapezoid(np.abs(fa - fb), grid))
    return float(np.clip(1.0 - tv, 0.0, 1.0))


def ess_until(running_mspe, threshold: float):
    """Cumulative draw count at the first time the running MSPE dips below
    ``threshold``; ``math.inf`` if it never does.

    ``running_mspe`` iterates (cumulative_draws, mspe) pairs.
    """
    for count, value in running_mspe:
        if value <= threshold:
            return int(count)
    return math.inf


def bootstrap_se(values, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the mean of replication-level values."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float("nan")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    return float(np.std(values[idx].mean(axis=1)))
