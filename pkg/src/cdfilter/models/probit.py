"""Binary probit regression via latent-score augmentation.

P(y = +1 | x) = Phi(x'beta) with beta ~ N(0, v I_p); labels are coded
{-1, +1} so the truncated-normal mean offset y * phi(x'b) / Phi(y x'b) is
the frozen-score formula for both classes.

The filtered sampler keeps latent scores only for the last ``budget``
observations.  Scores leaving that window are frozen at their conditional
mean under the current coefficient estimate and folded into a single
propagated cross-moment vector, so the per-sweep cost stays O(budget * p)
instead of growing with the stream.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from ..base import StreamingSampler, as_matrix, as_vector
from ..engine import DrawBatch, Group, SamplerState, step_shard
from ..errors import ShardShapeError
from ..numerics import (
    RngStream,
    cholesky_spd,
    chol_solve,
    sample_truncnormal,
    truncnormal_mean_offset,
)

__all__ = ["default_budget", "frozen_score", "predict_proba", "CdfProbit", "GibbsProbit"]


def default_budget(p: int) -> int:
    """Retained-observation budget, ceil(p log p) (natural log)."""
    return int(math.ceil(p * math.log(max(p, 2))))


def frozen_score(X, y, beta) -> np.ndarray:
    """Conditional mean of the latent scores given ``beta``:
    x'beta + y * phi(x'beta) / Phi(y x'beta)."""
    mean = X @ beta
    return mean + truncnormal_mean_offset(mean, y)


def predict_proba(beta_draws, X_test) -> np.ndarray:
    """Posterior-averaged success probabilities Phi(x'beta) per test row."""
    beta_draws = np.atleast_2d(np.asarray(beta_draws, dtype=float))
    X_test = as_matrix(X_test, name="X_test", n_cols=beta_draws.shape[1])
    return ndtr(X_test @ beta_draws.T).mean(axis=1)


def _check_labels(y) -> np.ndarray:
    y = as_vector(y, name="y")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ShardShapeError("labels must be coded -1/+1")
    return y


class CdfProbit(StreamingSampler):
    """Budgeted filtered probit sampler.

    While the stream still fits in the budget the sweeps are the exact
    augmentation Gibbs sampler over all latent scores; the propagated vector
    only starts absorbing retired scores once the window overflows.
    """

    def __init__(self, n_draws: int = 500, budget: int | None = None,
                 prior_variance: float = 1.0, random_state: int | None = None):
        self.n_draws = n_draws
        self.budget = budget
        self.prior_variance = prior_variance
        self.random_state = random_state

    def _init_state(self, p: int) -> None:
        state = SamplerState(self._rng_root())
        state.register_stat("SXX", np.zeros((p, p)))
        state.register_stat("C", np.zeros(p))
        state.slots["window_X"] = np.zeros((0, p))
        state.slots["window_y"] = np.zeros(0)
        state.slots["beta_cur"] = np.zeros(p)
        state.estimates["beta"] = np.zeros(p)
        self.state_ = state
        self.n_features_in_ = p
        self.budget_ = int(self.budget) if self.budget is not None else default_budget(p)
        if self.budget_ < 1:
            raise ValueError("budget must be >= 1")
        self.groups_ = [
            Group("beta_window", params=("beta",),
                  update_stats=self._update_suffstats, sample=self._sample_sweeps),
            Group("retired_scores", params=(),
                  update_stats=self._retire_outgoing, sample=None),
        ]

    @property
    def groups(self):
        return self.groups_

    def validate_shard(self, state, shard) -> None:
        X, y = shard
        as_matrix(X, n_cols=self.n_features_in_)
        _check_labels(y)

    def _update_suffstats(self, state: SamplerState, shard) -> None:
        X, y = shard
        state.add_to_stat("SXX", X.T @ X)
        state.slots["window_X"] = np.vstack([state.slots["window_X"], X])
        state.slots["window_y"] = np.concatenate([state.slots["window_y"], y])
        # posterior covariance of beta given all scores; one factorization
        # per shard, reused by every sweep
        prec = state.stat("SXX") + np.eye(self.n_features_in_) / self.prior_variance
        cov = chol_solve(prec, np.eye(self.n_features_in_), context="beta precision")
        state.slots["cov"] = 0.5 * (cov + cov.T)
        state.slots["cov_chol"] = cholesky_spd(state.slots["cov"])

    def _sample_sweeps(self, state, shard, n_draws, rng: RngStream):
        Xw = state.slots["window_X"]
        yw = state.slots["window_y"]
        cov, low = state.slots["cov"], state.slots["cov_chol"]
        c = state.stat("C")
        beta = state.slots["beta_cur"]
        p = self.n_features_in_
        betas = np.empty((n_draws, p))
        znorm = rng.standard_normal((n_draws, p))
        for s in range(n_draws):
            z = sample_truncnormal(Xw @ beta, yw, rng)
            beta = cov @ (c + Xw.T @ z) + low @ znorm[s]
            betas[s] = beta
        state.slots["beta_cur"] = betas[-1]
        return {"beta": betas}

    def _retire_outgoing(self, state: SamplerState, shard) -> None:
        Xw = state.slots["window_X"]
        yw = state.slots["window_y"]
        n = shard[0].shape[0]
        overflow = Xw.shape[0] + n - self.budget_
        k = min(max(overflow, 0), Xw.shape[0])
        if k == 0:
            return
        beta_hat = state.estimate("beta")
        z_hat = frozen_score(Xw[:k], yw[:k], beta_hat)
        state.add_to_stat("C", Xw[:k].T @ z_hat)
        state.slots["window_X"] = Xw[k:]
        state.slots["window_y"] = yw[k:]

    def partial_fit(self, X, y):
        X = as_matrix(X)
        y = _check_labels(y)
        if y.shape[0] != X.shape[0]:
            raise ShardShapeError("X and y disagree on the shard size")
        if not hasattr(self, "state_"):
            self._init_state(X.shape[1])
        _, batch = step_shard(self.state_, (X, y), self, self.n_draws)
        self._record(batch)
        return self

    def predict_proba(self, X_test) -> np.ndarray:
        return predict_proba(self.last_draws_["beta"], X_test)

    def predict(self, X_test) -> np.ndarray:
        return np.where(self.predict_proba(X_test) > 0.5, 1, -1)

    @property
    def coef_(self) -> np.ndarray:
        return self.state_.estimate("beta")

    def window_nbytes(self) -> int:
        return int(self.state_.slots["window_X"].nbytes
                   + self.state_.slots["window_y"].nbytes)

    def tracked_nbytes(self) -> int:
        """Propagated statistics plus retained data, for the run manifest."""
        return self.state_.scss_nbytes() + self.window_nbytes()


class GibbsProbit(StreamingSampler):
    """Exact sequential augmentation sampler keeping every observation."""

    def __init__(self, n_draws: int = 500, prior_variance: float = 1.0,
                 random_state: int | None = None):
        self.n_draws = n_draws
        self.prior_variance = prior_variance
        self.random_state = random_state

    def _init_state(self, p: int) -> None:
        state = SamplerState(self._rng_root())
        state.register_stat("SXX", np.zeros((p, p)))
        state.slots["X"] = np.zeros((0, p))
        state.slots["y"] = np.zeros(0)
        state.slots["beta_cur"] = np.zeros(p)
        state.estimates["beta"] = np.zeros(p)
        self.state_ = state
        self.n_features_in_ = p

    @classmethod
    def from_dim(cls, p: int, **kwargs) -> "GibbsProbit":
        est = cls(**kwargs)
        est._init_state(p)
        return est

    def partial_fit(self, X, y):
        X = as_matrix(X)
        y = _check_labels(y)
        if not hasattr(self, "state_"):
            self._init_state(X.shape[1])
        as_matrix(X, n_cols=self.n_features_in_)
        st = self.state_
        st.add_to_stat("SXX", X.T @ X)
        st.slots["X"] = np.vstack([st.slots["X"], X])
        st.slots["y"] = np.concatenate([st.slots["y"], y])
        st.t += 1
        self._record(self.draw(self.n_draws))
        return self

    def draw(self, n_draws: int) -> DrawBatch:
        st = self.state_
        rng = st.rng
        p = self.n_features_in_
        X, y = st.slots["X"], st.slots["y"]
        prec = st.stat("SXX") + np.eye(p) / self.prior_variance
        cov = chol_solve(prec, np.eye(p), context="beta precision")
        cov = 0.5 * (cov + cov.T)
        low = cholesky_spd(cov)
        beta = st.slots["beta_cur"]
        betas = np.empty((n_draws, p))
        znorm = rng.standard_normal((n_draws, p))
        for s in range(n_draws):
            if X.shape[0]:
                z = sample_truncnormal(X @ beta, y, rng)
                mean = cov @ (X.T @ z)
            else:
                mean = np.zeros(p)
            beta = mean + low @ znorm[s]
            betas[s] = beta
        st.slots["beta_cur"] = betas[-1]
        st.estimates["beta"] = betas.mean(axis=0)
        return DrawBatch(t=st.t, draws={"beta": betas})

    def predict_proba(self, X_test) -> np.ndarray:
        return predict_proba(self.last_draws_["beta"], X_test)

    def predict(self, X_test) -> np.ndarray:
        return np.where(self.predict_proba(X_test) > 0.5, 1, -1)

    @property
    def coef_(self) -> np.ndarray:
        return self.state_.estimate("beta")

    def data_nbytes(self) -> int:
        return int(self.state_.slots["X"].nbytes + self.state_.slots["y"].nbytes)

    def tracked_nbytes(self) -> int:
        """Sufficient statistics plus the full stored data."""
        return self.state_.scss_nbytes() + self.data_nbytes()
