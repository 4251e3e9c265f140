"""Shared estimator plumbing: sklearn-compatible base and input validation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .engine import DrawBatch, SamplerState, state_from_snapshot, state_to_snapshot
from .errors import ShardShapeError
from .numerics import RngStream


def as_matrix(x, name: str = "X", n_cols: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShardShapeError(f"{name} must be 2-dimensional, got shape {x.shape}")
    if n_cols is not None and x.shape[1] != n_cols:
        raise ShardShapeError(f"{name} has {x.shape[1]} columns, expected {n_cols}")
    if not np.all(np.isfinite(x)):
        raise ShardShapeError(f"{name} contains non-finite entries")
    return x


def as_vector(x, name: str = "y", n: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if n is not None and x.shape[0] != n:
        raise ShardShapeError(f"{name} has length {x.shape[0]}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise ShardShapeError(f"{name} contains non-finite entries")
    return x


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0.0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


class StreamingSampler(BaseEstimator):
    """Base class for samplers consuming a shard stream via ``partial_fit``.

    Subclasses create their :class:`SamplerState` lazily on the first shard
    and expose fitted results through trailing-underscore attributes; the
    constructor only records hyperparameters, so instances clone cleanly.
    """

    random_state: int | None

    def _rng_root(self) -> RngStream:
        """Root stream; a tuple random_state selects a derived sub-stream,
        so replications and paired algorithms never share draws."""
        rs = self.random_state
        if rs is None:
            return RngStream(0)
        if isinstance(rs, tuple):
            return RngStream(int(rs[0]), tuple(int(v) for v in rs[1:]))
        return RngStream(int(rs))

    @property
    def t_(self) -> int:
        return self.state_.t if hasattr(self, "state_") else 0

    @property
    def last_draws_(self) -> dict:
        return self.last_batch_.draws

    def fit(self, shards, y=None):
        """Consume an iterable of shards (model-specific shapes)."""
        for shard in shards:
            if isinstance(shard, tuple):
                self.partial_fit(*shard)
            else:
                self.partial_fit(shard)
        return self

    # -- stop/resume -------------------------------------------------------
    def state_snapshot(self) -> dict:
        return state_to_snapshot(self.state_)

    def load_state_snapshot(self, snapshot: dict) -> "StreamingSampler":
        self.state_ = state_from_snapshot(snapshot)
        return self

    def _record(self, batch: DrawBatch) -> None:
        self.last_batch_ = batch
