"""Gaussian linear regression: filtered sampler and exact sequential Gibbs.

Model: y = x'beta + eps, eps ~ N(0, sigma^2), with priors beta ~ N(0, I_p)
and sigma^2 ~ IG(a, b).  The filtered sampler propagates one precision-type
matrix and one cross-moment vector for beta (scaled by the running noise
estimate) plus two scalars for sigma^2; the exact sampler carries the usual
sufficient statistics X'X, X'y, y'y over all observed data.
"""

from __future__ import annotations

import numpy as np

from ..base import StreamingSampler, as_matrix, as_vector, check_positive
from ..engine import DrawBatch, Group, SamplerState, step_shard
from ..errors import NumericDegeneracyError
from ..numerics import RngStream, chol_solve, sample_invgamma, sample_mvn

__all__ = [
    "update_beta_stats",
    "beta_conditional",
    "sigma2_conditional",
    "CdfLinearRegression",
    "GibbsLinearRegression",
]


def update_beta_stats(c11, c12, X, y, sigma2_hat):
    """Fold one shard into the beta-block statistics at the current noise
    estimate: returns (c11 + X'X/s2, c12 + X'y/s2)."""
    s2 = check_positive(sigma2_hat, "sigma2_hat")
    return c11 + (X.T @ X) / s2, c12 + (X.T @ y) / s2


def beta_conditional(c11, c12):
    """Mean and covariance of the beta conditional: cov = (c11 + I)^-1."""
    p = c12.shape[0]
    prec = c11 + np.eye(p)
    cov = chol_solve(prec, np.eye(p), context="beta precision")
    cov = 0.5 * (cov + cov.T)
    return cov @ c12, cov


def sigma2_conditional(a, b, syy, c21, c22, nt):
    """Shape and rate of the sigma^2 conditional IG(a + nt/2, b + rss/2)."""
    rate = b + 0.5 * (syy - 2.0 * c22 + c21)
    if rate <= 0.0:
        raise NumericDegeneracyError(
            f"sigma^2 conditional rate {rate} <= 0; "
            "the running coefficient estimates are inconsistent with the data"
        )
    return a + 0.5 * nt, rate


class CdfLinearRegression(StreamingSampler):
    """Filtered regression sampler updating statistics once per shard.

    Parameters follow the sklearn convention; fitted attributes are
    ``coef_`` (current posterior mean estimate for beta),
    ``noise_variance_`` (current estimate of sigma^2) and ``last_batch_``
    (the most recent draws).
    """

    def __init__(self, n_draws: int = 500, a: float = 1.0, b: float = 1.0,
                 sigma2_init: float | None = None,
                 random_state: int | None = None):
        self.n_draws = n_draws
        self.a = a
        self.b = b
        # None calibrates the starting noise scale from the first shard's
        # response variance; a unit start is only safe for a response that
        # is already centered and scaled, and would otherwise give the first
        # shard a permanently inflated weight in the propagated statistics.
        self.sigma2_init = sigma2_init
        self.random_state = random_state

    # -- engine hooks -------------------------------------------------------
    def _init_state(self, p: int, y0: np.ndarray) -> None:
        state = SamplerState(self._rng_root())
        state.register_stat("C11", np.zeros((p, p)))
        state.register_stat("C12", np.zeros(p))
        state.register_stat("C21", 0.0)
        state.register_stat("C22", 0.0)
        state.register_stat("SYY", 0.0)
        state.register_stat("NT", 0.0)
        state.estimates["beta"] = np.zeros(p)
        if self.sigma2_init is not None:
            state.estimates["sigma2"] = check_positive(self.sigma2_init, "sigma2_init")
        else:
            v = float(np.var(y0))
            state.estimates["sigma2"] = v if v > 0.0 else 1.0
        self.state_ = state
        self.n_features_in_ = p
        self.groups_ = [
            Group("beta", params=("beta",),
                  update_stats=self._update_beta_stats, sample=self._sample_beta),
            Group("sigma2", params=("sigma2",),
                  update_stats=self._update_sigma2_stats, sample=self._sample_sigma2),
        ]

    @property
    def groups(self):
        return self.groups_

    def validate_shard(self, state: SamplerState, shard) -> None:
        X, y = shard
        X = as_matrix(X, n_cols=self.n_features_in_)
        as_vector(y, n=X.shape[0])

    def _update_beta_stats(self, state: SamplerState, shard) -> None:
        X, y = shard
        c11, c12 = update_beta_stats(
            state.stat("C11"), state.stat("C12"), X, y, state.estimate("sigma2")
        )
        state.set_stat("C11", c11)
        state.set_stat("C12", c12)
        state.set_stat("SYY", state.stat("SYY") + float(y @ y))
        state.set_stat("NT", state.stat("NT") + len(y))

    def _sample_beta(self, state, shard, n_draws, rng: RngStream):
        mean, cov = beta_conditional(state.stat("C11"), state.stat("C12"))
        return {"beta": sample_mvn(mean, cov, rng, size=n_draws)}

    def _update_sigma2_stats(self, state: SamplerState, shard) -> None:
        X, y = shard
        bhat = state.estimate("beta")
        xb = X @ bhat
        state.set_stat("C21", state.stat("C21") + float(xb @ xb))
        state.set_stat("C22", state.stat("C22") + float(xb @ y))

    def _sample_sigma2(self, state, shard, n_draws, rng: RngStream):
        shape, rate = sigma2_conditional(
            self.a, self.b, state.stat("SYY"), state.stat("C21"),
            state.stat("C22"), state.stat("NT"),
        )
        return {"sigma2": sample_invgamma(shape, rate, rng, size=n_draws)}

    # -- public API ----------------------------------------------------------
    def partial_fit(self, X, y):
        X = as_matrix(X)
        y = as_vector(y, n=X.shape[0])
        if not hasattr(self, "state_"):
            self._init_state(X.shape[1], y)
        _, batch = step_shard(self.state_, (X, y), self, self.n_draws)
        self._record(batch)
        return self

    @property
    def coef_(self) -> np.ndarray:
        return self.state_.estimate("beta")

    @property
    def noise_variance_(self) -> float:
        return float(self.state_.estimate("sigma2"))


class GibbsLinearRegression(StreamingSampler):
    """Exact two-block Gibbs sampler on cumulative sufficient statistics.

    Alternates beta | sigma^2 and sigma^2 | beta; the chain warm-starts from
    its last point when the next shard arrives.  With no data the sweeps
    reproduce the priors.
    """

    def __init__(self, n_draws: int = 500, a: float = 1.0, b: float = 1.0,
                 random_state: int | None = None):
        self.n_draws = n_draws
        self.a = a
        self.b = b
        self.random_state = random_state

    def _init_state(self, p: int) -> None:
        state = SamplerState(self._rng_root())
        state.register_stat("SXX", np.zeros((p, p)))
        state.register_stat("SXY", np.zeros(p))
        state.register_stat("SYY", 0.0)
        state.register_stat("NT", 0.0)
        state.estimates["beta"] = np.zeros(p)
        state.estimates["sigma2"] = 1.0
        state.slots["beta_cur"] = np.zeros(p)
        state.slots["sigma2_cur"] = 1.0
        self.state_ = state
        self.n_features_in_ = p

    def partial_fit(self, X, y):
        X = as_matrix(X)
        y = as_vector(y, n=X.shape[0])
        if not hasattr(self, "state_"):
            self._init_state(X.shape[1])
        st = self.state_
        as_matrix(X, n_cols=self.n_features_in_)
        st.set_stat("SXX", st.stat("SXX") + X.T @ X)
        st.set_stat("SXY", st.stat("SXY") + X.T @ y)
        st.set_stat("SYY", st.stat("SYY") + float(y @ y))
        st.set_stat("NT", st.stat("NT") + len(y))
        st.t += 1
        self._record(self.draw(self.n_draws))
        return self

    def draw(self, n_draws: int):
        """Run ``n_draws`` sweeps against the current sufficient statistics."""
        if not hasattr(self, "state_"):
            raise RuntimeError("call partial_fit first (or use from_dim)")
        st = self.state_
        rng = st.rng
        sxx, sxy = st.stat("SXX"), st.stat("SXY")
        syy, nt = st.stat("SYY"), st.stat("NT")
        p = sxy.shape[0]
        # One eigendecomposition serves every sweep of this shard: the beta
        # conditional precision is SXX / sigma2 + I = Q (lam/sigma2 + 1) Q'.
        lam, q = np.linalg.eigh(sxx)
        lam = np.maximum(lam, 0.0)
        sxy_q = q.T @ sxy
        sigma2 = st.slots["sigma2_cur"]
        betas = np.empty((n_draws, p))
        sigmas = np.empty(n_draws)
        znorm = rng.standard_normal((n_draws, p))
        for s in range(n_draws):
            prec_q = lam / sigma2 + 1.0
            w = sxy_q / sigma2 / prec_q + znorm[s] / np.sqrt(prec_q)
            beta = q @ w
            rate = self.b + 0.5 * (syy - 2.0 * w @ sxy_q + (lam * w) @ w)
            sigma2 = float(sample_invgamma(self.a + 0.5 * nt, rate, rng))
            betas[s] = beta
            sigmas[s] = sigma2
        st.slots["beta_cur"] = betas[-1]
        st.slots["sigma2_cur"] = sigma2
        st.estimates["beta"] = betas.mean(axis=0)
        st.estimates["sigma2"] = float(sigmas.mean())
        return DrawBatch(t=st.t, draws={"beta": betas, "sigma2": sigmas})

    @classmethod
    def from_dim(cls, p: int, **kwargs) -> "GibbsLinearRegression":
        """Sampler with empty statistics, for prior-only draws."""
        est = cls(**kwargs)
        est._init_state(p)
        return est

    @property
    def coef_(self) -> np.ndarray:
        return self.state_.estimate("beta")

    @property
    def noise_variance_(self) -> float:
        return float(self.state_.estimate("sigma2"))
