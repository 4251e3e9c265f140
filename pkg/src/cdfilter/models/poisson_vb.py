"""Streaming variational approximation for a Poisson additive mixed model.

Model: y ~ Poisson(exp(X beta + Z u)), beta ~ N(0, sigma_beta^2 I_k),
u_s ~ N(0, sigma_s^2 I_{k_s}) per random-effect block s = 1..r, with
sigma_s^2 ~ IG(1/2, 1/b_s) and b_s ~ IG(1/2, 1/a_s^2).

No conditional here admits a propagated statistic directly, so the
factorized variational posterior q(beta, u) q(sigma^2) q(b) is maintained
instead: its natural parameters are updated by damped Newton-style
fixed-point iterations anchored at the previous shard's values, and three
propagated aggregates carry the absorbed data terms forward.  Draws are
never produced; the posterior is summarized by the variational moments.
"""

from __future__ import annotations

import numpy as np

from ..base import StreamingSampler, as_matrix, as_vector
from ..engine import SamplerState
from ..errors import NumericOverflowError, ShardShapeError
from ..numerics import chol_solve

__all__ = ["inv_b_update", "inv_sigma2_update", "PoissonVbMixed"]

_EXP_CLAMP = 30.0


def inv_b_update(mu_inv_sigma2, a_s):
    """E[1/b_s] under its inverse-gamma factor: 1 / (E[1/sigma_s^2] + a_s^-2)."""
    return 1.0 / (mu_inv_sigma2 + 1.0 / (np.asarray(a_s, dtype=float) ** 2))


def inv_sigma2_update(mu_inv_b, u_sq_plus_trace, k_s):
    """E[1/sigma_s^2]: (k_s + 1) / (2 E[1/b_s] + |mu_u|^2 + tr(Sigma_u))."""
    return (np.asarray(k_s, dtype=float) + 1.0) / (
        2.0 * mu_inv_b + u_sq_plus_trace
    )


class PoissonVbMixed(StreamingSampler):
    """Streaming variational estimator for the Poisson mixed model.

    ``block_sizes`` gives (k_1, ..., k_r); the fixed-effect count is taken
    from the first shard's X.  Shards arrive as (X, Z, y) with Z holding the
    random-effect design for the shard's rows, columns ordered block by
    block.
    """

    def __init__(self, block_sizes: tuple, sigma_beta2: float = 100.0,
                 a_scale: float = 1.0, n_fx: int = 25, tol: float = 1e-8,
                 random_state: int | None = None):
        self.block_sizes = tuple(block_sizes)
        self.sigma_beta2 = sigma_beta2
        self.a_scale = a_scale
        self.n_fx = n_fx
        self.tol = tol
        self.random_state = random_state

    # -- state ----------------------------------------------------------------
    def _init_state(self, k: int) -> None:
        d = k + sum(self.block_sizes)
        r = len(self.block_sizes)
        self.n_fixed_ = k
        self.dim_ = d
        state = SamplerState(self._rng_root())
        state.register_stat("C11", np.zeros(d))
        state.register_stat("C12", np.zeros(d))
        state.register_stat("C13", np.zeros((d, d)))
        state.estimates["mu"] = np.zeros(d)
        state.estimates["mu_inv_b"] = np.ones(r)
        state.estimates["mu_inv_sigma2"] = np.ones(r)
        # the loop's first weight evaluation sees this spread, so a diffuse
        # prior scale must not enter exp(c'Sigma c / 2) directly; the first
        # Sigma update replaces it with the data-based value anyway
        state.estimates["Sigma"] = np.diag(1.0 / (self._d_diag(np.ones(r)) + 1.0))
        self.state_ = state

    def _d_diag(self, mu_inv_sigma2) -> np.ndarray:
        parts = [np.full(self.n_fixed_, 1.0 / self.sigma_beta2)]
        for size, v in zip(self.block_sizes, mu_inv_sigma2):
            parts.append(np.full(size, v))
        return np.concatenate(parts)

    def _block_slices(self):
        start = self.n_fixed_
        for size in self.block_sizes:
            yield slice(start, start + size)
            start += size

    # -- updates ----------------------------------------------------------------
    def _weights(self, c, mu, sigma):
        expo = c @ mu + 0.5 * np.einsum("ij,jk,ik->i", c, sigma, c)
        return expo, np.exp(np.minimum(expo, _EXP_CLAMP))

    def partial_fit(self, X, Z, y):
        X = as_matrix(X, name="X")
        if not hasattr(self, "state_"):
            self._init_state(X.shape[1])
        as_matrix(X, name="X", n_cols=self.n_fixed_)
        Z = as_matrix(Z, name="Z", n_cols=self.dim_ - self.n_fixed_)
        y = as_vector(y, n=X.shape[0])
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ShardShapeError("counts must be non-negative integers")
        st = self.state_
        st.t += 1
        if X.shape[0] == 0:
            return self
        c = np.hstack([X, Z])
        mu_anchor = st.estimates["mu"].copy()
        mu = mu_anchor.copy()
        sigma = st.estimates["Sigma"].copy()
        mu_inv_sigma2 = st.estimates["mu_inv_sigma2"].copy()
        mu_inv_b = st.estimates["mu_inv_b"].copy()
        c11, c12, c13 = st.stat("C11"), st.stat("C12"), st.stat("C13")
        cy = c.T @ y

        h1 = c11 + cy

        def merit(mu_v, sigma_v, d_diag_v):
            # concave in mu: linear data term minus total weight minus ridge
            _, w_v = self._weights(c, mu_v, sigma_v)
            return float((h1 - c12) @ mu_v - w_v.sum()
                         - 0.5 * mu_v @ (d_diag_v * mu_v))

        w = None
        for _ in range(self.n_fx):
            d_diag = self._d_diag(mu_inv_sigma2)
            expo, w = self._weights(c, mu, sigma)
            h2 = c12 + c.T @ w
            h3 = c13 + (c.T * w) @ c
            # Newton step from the current iterate; anchoring the base point
            # at the previous shard's value instead makes the map a
            # reflection (Jacobian near -I) and it oscillates apart
            mu_cand = mu + sigma @ (h1 - h2 - d_diag * mu)
            prec = h3 + np.diag(d_diag)
            # chol_solve validates positive definiteness every iteration
            sigma_cand = chol_solve(prec, np.eye(self.dim_),
                                    context="variational precision")
            sigma_cand = 0.5 * (sigma_cand + sigma_cand.T)
            # halve any overshooting step: the merit is concave, so a short
            # enough step along the Newton direction always improves it
            base = merit(mu, sigma, d_diag)
            halvings = 0
            while (np.any(self._weights(c, mu_cand, sigma)[0] > _EXP_CLAMP)
                   or merit(mu_cand, sigma, d_diag) < base - 1e-12 * (1 + abs(base))):
                halvings += 1
                if halvings > 10:
                    raise NumericOverflowError(
                        "w", "variational weights diverged despite step halving"
                    )
                mu_cand = mu + 0.5 * (mu_cand - mu)
            rel = np.max(np.abs(mu_cand - mu) / (1.0 + np.abs(mu)))
            mu, sigma = mu_cand, sigma_cand
            if rel < self.tol:
                break

        # scale-factor block: its own fixed-point loop at the new moments
        u_terms = np.array([
            float(mu[sl] @ mu[sl]) + float(np.trace(sigma[sl, sl]))
            for sl in self._block_slices()
        ])
        k_s = np.array(self.block_sizes, dtype=float)
        a_s = np.full(len(self.block_sizes), self.a_scale)
        for _ in range(self.n_fx):
            new_inv_b = inv_b_update(mu_inv_sigma2, a_s)
            new_inv_sigma2 = inv_sigma2_update(new_inv_b, u_terms, k_s)
            rel = max(
                np.max(np.abs(new_inv_b - mu_inv_b) / (1.0 + np.abs(mu_inv_b))),
                np.max(np.abs(new_inv_sigma2 - mu_inv_sigma2)
                       / (1.0 + np.abs(mu_inv_sigma2))),
            )
            mu_inv_b, mu_inv_sigma2 = new_inv_b, new_inv_sigma2
            if rel < self.tol:
                break

        # fold the shard into the propagated aggregates at the final weights
        st.set_stat("C11", c11 + cy)
        st.set_stat("C12", c12 + c.T @ w)
        st.set_stat("C13", c13 + (c.T * w) @ c)
        st.estimates["mu"] = mu
        st.estimates["Sigma"] = sigma
        st.estimates["mu_inv_b"] = mu_inv_b
        st.estimates["mu_inv_sigma2"] = mu_inv_sigma2
        return self

    # -- fitted results -----------------------------------------------------------
    @property
    def mean_(self) -> np.ndarray:
        return self.state_.estimates["mu"]

    @property
    def covariance_(self) -> np.ndarray:
        return self.state_.estimates["Sigma"]

    @property
    def coef_(self) -> np.ndarray:
        return self.mean_[: self.n_fixed_]
