"""Compressed linear regression through a sampled random projection.

Model: y | Phi, beta, sigma^2 ~ N(X Phi' beta, sigma^2 I) with an m x p
projection (m << p), priors beta ~ N(0, sigma^2 v I_m), sigma^2 ~ IG(a, b),
columns Phi_j ~ N(Phi0_j, K) around a row-orthonormalized random projection
with row scalings kappa_i ~ IG(c/2, d/2).

Only gamma = Phi' beta is identified (any orthogonal rotation of (Phi, beta)
leaves the likelihood unchanged), so estimation quality is always judged on
gamma.

The filtered sampler marginalizes (beta, sigma^2) against an m x m
cross-moment pair, needing a single m x m factorization per shard, and
updates the projection columns against per-column m x m moment blocks.  The
exact sequential sampler keeps the full p x p predictor Gram matrix and
refactorizes per sweep.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from ..base import StreamingSampler, as_matrix, as_vector
from ..engine import DrawBatch, Group, SamplerState, step_shard
from ..errors import NumericDegeneracyError
from ..numerics import RngStream, cholesky_spd, sample_invgamma

__all__ = [
    "default_projection_dim",
    "projection_prior",
    "sample_beta_sigma2",
    "CdfCompressed",
    "GibbsCompressed",
]


def default_projection_dim(p: int) -> int:
    return max(10, int(math.ceil(math.log(max(p, 2)))))


def projection_prior(p: int, m: int, rng: RngStream) -> np.ndarray:
    """Row-orthonormalized Gaussian random projection (m x p)."""
    raw = rng.standard_normal((p, m))
    q, r = np.linalg.qr(raw)
    # fix the sign convention so the draw is reproducible across BLAS builds
    q *= np.sign(np.diag(r))
    return q.T.copy()


def sample_beta_sigma2(c11, c12, fyy, nt, rng: RngStream, n_draws: int,
                       prior_variance: float = 1.0,
                       prior_a: float = 1.0, prior_b: float = 1.0):
    """Compositional draws of (sigma^2, beta | sigma^2) given the m x m
    cross moments; returns (betas, sigma2s, mu, w_chol, b1t).

    With no data the priors are returned.  One factorization serves all
    draws, which is the marginal-block efficiency claim.
    """
    m = c12.shape[0]
    if nt <= 0:
        sigma2s = sample_invgamma(prior_a, prior_b, rng, size=n_draws)
        z = rng.standard_normal((m, n_draws))
        betas = (np.sqrt(prior_variance * sigma2s)[None, :] * z).T
        return betas, sigma2s, np.zeros(m), None, None
    w = c11 + np.eye(m) / prior_variance
    low = cholesky_spd(w, context="marginal block")
    half = solve_triangular(low, c12, lower=True)
    mu = solve_triangular(low, half, lower=True, trans="T")
    b1t = fyy - float(half @ half)
    if b1t <= 0.0:
        raise NumericDegeneracyError(
            f"marginal residual rate {b1t} <= 0: projection moments are inconsistent"
        )
    a1t = float(nt)
    sigma2s = sample_invgamma(0.5 * a1t, 0.5 * b1t, rng, size=n_draws)
    z = rng.standard_normal((m, n_draws))
    spread = solve_triangular(low, z, lower=True, trans="T") * np.sqrt(sigma2s)[None, :]
    betas = mu[None, :] + spread.T
    return betas, sigma2s, mu, low, b1t


class CdfCompressed(StreamingSampler):
    """Filtered compressed-regression sampler (projection sampled too).

    ``phi_coupling`` selects how one projection column sees the others:

    - ``"frozen"`` (default): the per-column cross moment absorbs the
      partial residual y - X gamma_hat + X_j gamma_hat_j at shard time, so
      within a sweep the columns are conditionally independent given the
      running estimates (and the sweep vectorizes).  This is the
      surrogate-statistic pattern applied to the column coupling itself.
    - ``"current"``: couple through sum_{l != j} C21_l Phi_l with the
      in-sweep columns.  Because C21_l carries |X_l|^2 in place of the
      cross products X_j'X_l, the implied conditionals are mutually
      inconsistent on weakly correlated designs and the scan drifts;
      available for comparison runs only.
    """

    def __init__(self, n_draws: int = 500, m: int | None = None,
                 prior_variance: float = 1.0, prior_a: float = 1.0,
                 prior_b: float = 1.0, kappa_c: float = 1.0, kappa_d: float = 1.0,
                 phi_coupling: str = "frozen", random_state: int | None = None):
        self.n_draws = n_draws
        self.m = m
        self.prior_variance = prior_variance
        self.prior_a = prior_a
        self.prior_b = prior_b
        self.kappa_c = kappa_c
        self.kappa_d = kappa_d
        self.phi_coupling = phi_coupling
        self.random_state = random_state

    def _init_state(self, p: int, y0: np.ndarray) -> None:
        if self.phi_coupling not in ("frozen", "current"):
            raise ValueError(f"unknown phi_coupling {self.phi_coupling!r}")
        m = self.m if self.m is not None else default_projection_dim(p)
        state = SamplerState(self._rng_root())
        phi0 = projection_prior(p, m, state.rng.substream(0))
        state.register_stat("C11", np.zeros((m, m)))
        state.register_stat("C12", np.zeros(m))
        state.register_stat("C21", np.zeros((p, m, m)))
        state.register_stat("C22", np.zeros((p, m)))
        state.register_stat("FYY", 0.0)
        state.register_stat("NT", 0.0)
        state.slots["phi0"] = phi0
        state.slots["phi_cur"] = phi0.copy()
        state.slots["w_factorizations"] = 0.0
        v = float(np.var(y0))
        state.estimates["beta"] = np.zeros(m)
        state.estimates["sigma2"] = v if v > 0 else 1.0
        state.estimates["phi"] = phi0.copy()
        state.estimates["kappa"] = np.ones(m)
        self.state_ = state
        self.n_features_in_ = p
        self.m_ = m
        self.groups_ = [
            Group("beta_sigma2", params=("beta", "sigma2"),
                  update_stats=self._update_marginal_stats,
                  sample=self._sample_beta_sigma2,
                  estimate=self._estimate_beta_sigma2),
            Group("projection", params=("gamma", "kappa"),
                  update_stats=self._update_projection_stats,
                  sample=self._sample_projection,
                  estimate=self._estimate_projection),
        ]

    @property
    def groups(self):
        return self.groups_

    def validate_shard(self, state, shard) -> None:
        X, y = shard
        as_matrix(X, n_cols=self.n_features_in_)
        as_vector(y, n=X.shape[0])

    # -- group 1: marginalized coefficient block ----------------------------
    def _update_marginal_stats(self, state: SamplerState, shard) -> None:
        X, y = shard
        phi_hat = state.estimate("phi")
        proj = X @ phi_hat.T  # n x m
        state.add_to_stat("C11", proj.T @ proj)
        state.add_to_stat("C12", proj.T @ y)
        state.add_to_stat("FYY", float(y @ y))
        state.add_to_stat("NT", len(y))

    def _sample_beta_sigma2(self, state, shard, n_draws, rng: RngStream):
        betas, sigma2s, mu, low, b1t = sample_beta_sigma2(
            state.stat("C11"), state.stat("C12"), state.stat("FYY"),
            state.stat("NT"), rng, n_draws, self.prior_variance,
            self.prior_a, self.prior_b,
        )
        state.slots["w_factorizations"] += 1
        state.slots["map_beta"] = mu
        state.slots["map_sigma2"] = (b1t / (state.stat("NT") + 1.0)
                                     if b1t is not None else 1.0)
        state.slots["beta_draws"] = betas
        state.slots["sigma2_draws"] = sigma2s
        return {"beta": betas, "sigma2": sigma2s}

    def _estimate_beta_sigma2(self, state, draws):
        # closed-form posterior summaries, not Monte Carlo means
        return {"beta": state.slots["map_beta"],
                "sigma2": float(state.slots["map_sigma2"])}

    # -- group 2: projection block -------------------------------------------
    def _update_projection_stats(self, state: SamplerState, shard) -> None:
        X, y = shard
        beta_hat = state.estimate("beta")
        outer = np.outer(beta_hat, beta_hat)
        colsq = np.einsum("ij,ij->j", X, X)
        state.add_to_stat("C21", colsq[:, None, None] * outer[None, :, :])
        if self.phi_coupling == "frozen":
            # per-column partial residual at the running estimates:
            # X_j'(y - X gamma_hat) + |X_j|^2 gamma_hat_j
            gamma_hat = state.estimate("phi").T @ beta_hat
            resid = y - X @ gamma_hat
            cross = X.T @ resid + colsq * gamma_hat
        else:
            cross = X.T @ y
        state.add_to_stat("C22", cross[:, None] * beta_hat[None, :])

    def _sample_projection(self, state, shard, n_draws, rng: RngStream):
        p, m = self.n_features_in_, self.m_
        phi0 = state.slots["phi0"]
        phi = state.slots["phi_cur"].copy()
        sigma2 = float(state.estimate("sigma2"))
        kappa = state.estimate("kappa").copy()
        betas = state.slots["beta_draws"]
        c21_s = state.stat("C21") / sigma2
        c22_s = state.stat("C22") / sigma2
        gammas = np.empty((n_draws, p))
        kappas = np.empty((n_draws, m))
        phi_sum = np.zeros((m, p))
        kd_shape = 0.5 * (self.kappa_c + p)
        sequential = self.phi_coupling == "current"
        for s in range(n_draws):
            kinv = 1.0 / kappa
            prec = c21_s + np.diag(kinv)[None, :, :]
            cov = np.linalg.inv(prec)
            cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
            lows = np.linalg.cholesky(cov)
            kphi0 = kinv[:, None] * phi0
            znorm = rng.standard_normal((p, m))
            if sequential:
                a_vec = np.einsum("jkl,lj->k", c21_s, phi)
                for j in range(p):
                    cj = c21_s[j]
                    col = phi[:, j]
                    h = c22_s[j] - a_vec + cj @ col
                    new = cov[j] @ (h + kphi0[:, j]) + lows[j] @ znorm[j]
                    a_vec += cj @ (new - col)
                    phi[:, j] = new
            else:
                rhs = c22_s + kphi0.T
                means = np.einsum("jkl,jl->jk", cov, rhs)
                phi = (means + np.einsum("jkl,jl->jk", lows, znorm)).T
            dev = phi - phi0
            kd_rate = 0.5 * (self.kappa_d + np.einsum("ij,ij->i", dev, dev))
            kappa = sample_invgamma(kd_shape, kd_rate, rng)
            phi_sum += phi
            gammas[s] = phi.T @ betas[s]  # pair with the coefficient draws
            kappas[s] = kappa
        state.slots["phi_cur"] = phi
        state.slots["phi_mean"] = phi_sum / n_draws
        return {"gamma": gammas, "kappa": kappas}

    def _estimate_projection(self, state, draws):
        return {"phi": state.slots["phi_mean"],
                "kappa": draws["kappa"].mean(axis=0)}

    # -- public API ------------------------------------------------------------
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
        """Point estimate of the identified coefficients gamma = Phi' beta."""
        return self.state_.estimate("phi").T @ self.state_.estimate("beta")

    @property
    def noise_variance_(self) -> float:
        return float(self.state_.estimate("sigma2"))

    def predict(self, X_test) -> np.ndarray:
        return as_matrix(X_test, n_cols=self.n_features_in_) @ self.coef_

    def predictive_draws(self, X_test, rng: RngStream) -> np.ndarray:
        """(S, n_test) posterior predictive draws including observation noise."""
        X_test = as_matrix(X_test, n_cols=self.n_features_in_)
        gam = self.last_draws_["gamma"]
        sig = self.last_draws_["sigma2"]
        s = min(gam.shape[0], sig.shape[0])
        mean = gam[:s] @ X_test.T
        noise = rng.standard_normal(mean.shape) * np.sqrt(sig[:s])[:, None]
        return mean + noise

    def reset_chain(self) -> None:
        """Overdisperse the within-chain state (the projection draw) back to
        its starting point; statistics and estimates stay put."""
        self.state_.slots["phi_cur"] = self.state_.slots["phi0"].copy()

    def extra_draws(self, n_draws: int) -> dict:
        """Extra sweeps at the current statistics and estimates, without
        folding any data; used for mixing measurements."""
        st = self.state_
        st._stats_locked = True
        try:
            out = self._sample_beta_sigma2(st, None, n_draws, st.rng)
            out.update(self._sample_projection(st, None, n_draws, st.rng))
        finally:
            st._stats_locked = False
        return out

    def tracked_nbytes(self) -> int:
        return self.state_.scss_nbytes()


class GibbsCompressed(StreamingSampler):
    """Exact sequential sampler with the full p x p Gram statistics."""

    def __init__(self, n_draws: int = 500, m: int | None = None,
                 prior_variance: float = 1.0, prior_a: float = 1.0,
                 prior_b: float = 1.0, kappa_c: float = 1.0, kappa_d: float = 1.0,
                 random_state: int | None = None):
        self.n_draws = n_draws
        self.m = m
        self.prior_variance = prior_variance
        self.prior_a = prior_a
        self.prior_b = prior_b
        self.kappa_c = kappa_c
        self.kappa_d = kappa_d
        self.random_state = random_state

    def _init_state(self, p: int, y0: np.ndarray) -> None:
        m = self.m if self.m is not None else default_projection_dim(p)
        state = SamplerState(self._rng_root())
        phi0 = projection_prior(p, m, state.rng.substream(0))
        state.register_stat("FXX", np.zeros((p, p)))
        state.register_stat("FXY", np.zeros(p))
        state.register_stat("FYY", 0.0)
        state.register_stat("NT", 0.0)
        state.slots["phi0"] = phi0
        state.slots["phi_cur"] = phi0.copy()
        state.slots["kappa_cur"] = np.ones(m)
        state.estimates["beta"] = np.zeros(m)
        state.estimates["sigma2"] = float(np.var(y0)) if np.var(y0) > 0 else 1.0
        state.estimates["phi"] = phi0.copy()
        self.state_ = state
        self.n_features_in_ = p
        self.m_ = m

    def partial_fit(self, X, y):
        X = as_matrix(X)
        y = as_vector(y, n=X.shape[0])
        if not hasattr(self, "state_"):
            self._init_state(X.shape[1], y)
        as_matrix(X, n_cols=self.n_features_in_)
        st = self.state_
        st.add_to_stat("FXX", X.T @ X)
        st.add_to_stat("FXY", X.T @ y)
        st.add_to_stat("FYY", float(y @ y))
        st.add_to_stat("NT", len(y))
        st.t += 1
        self._record(self.draw(self.n_draws))
        return self

    def draw(self, n_draws: int) -> DrawBatch:
        st = self.state_
        rng = st.rng
        p, m = self.n_features_in_, self.m_
        fxx, fxy = st.stat("FXX"), st.stat("FXY")
        fyy, nt = st.stat("FYY"), st.stat("NT")
        phi = st.slots["phi_cur"].copy()
        kappa = st.slots["kappa_cur"].copy()
        phi0 = st.slots["phi0"]
        fdiag = np.diag(fxx)
        betas = np.empty((n_draws, m))
        sigma2s = np.empty(n_draws)
        gammas = np.empty((n_draws, p))
        kappas = np.empty((n_draws, m))
        phi_sum = np.zeros((m, p))
        kd_shape = 0.5 * (self.kappa_c + p)
        eye_m = np.eye(m)
        for s in range(n_draws):
            # (sigma^2, beta | Phi): refactorized every sweep because Phi moved
            u = phi @ fxx
            w = u @ phi.T + eye_m / self.prior_variance
            low = cholesky_spd(w, context="marginal block")
            v = phi @ fxy
            half = solve_triangular(low, v, lower=True)
            b1t = fyy - float(half @ half)
            if b1t <= 0.0:
                raise NumericDegeneracyError("marginal residual rate <= 0")
            sigma2 = float(sample_invgamma(0.5 * nt, 0.5 * b1t, rng))
            mu = solve_triangular(low, half, lower=True, trans="T")
            beta = mu + math.sqrt(sigma2) * solve_triangular(
                low, rng.standard_normal(m), lower=True, trans="T"
            )
            # column scan with exact cross moments through FXX
            gamma = phi.T @ beta
            ucross = fxx @ gamma
            bb = np.outer(beta, beta)
            kinv = 1.0 / kappa
            kphi0 = kinv[:, None] * phi0
            znorm = rng.standard_normal((p, m))
            kd = np.diag(kinv)
            for j in range(p):
                r_j = fxy[j] - ucross[j] + fdiag[j] * gamma[j]
                prec = bb * (fdiag[j] / sigma2) + kd
                covj = np.linalg.inv(prec)
                covj = 0.5 * (covj + covj.T)
                mean = covj @ (beta * (r_j / sigma2) + kphi0[:, j])
                new = mean + np.linalg.cholesky(covj) @ znorm[j]
                delta = float(beta @ new - gamma[j])
                gamma[j] += delta
                ucross += fxx[:, j] * delta
                phi[:, j] = new
            dev = phi - phi0
            kappa = sample_invgamma(kd_shape,
                                    0.5 * (self.kappa_d + np.einsum("ij,ij->i", dev, dev)),
                                    rng)
            betas[s] = beta
            sigma2s[s] = sigma2
            gammas[s] = phi.T @ beta
            kappas[s] = kappa
            phi_sum += phi
        st.slots["phi_cur"] = phi
        st.slots["kappa_cur"] = kappa
        st.estimates["beta"] = betas.mean(axis=0)
        st.estimates["sigma2"] = float(sigma2s.mean())
        st.estimates["phi"] = phi_sum / n_draws
        return DrawBatch(t=st.t, draws={"beta": betas, "sigma2": sigma2s,
                                        "gamma": gammas, "kappa": kappas})

    @property
    def coef_(self) -> np.ndarray:
        return self.state_.estimate("phi").T @ self.state_.estimate("beta")

    def predict(self, X_test) -> np.ndarray:
        return as_matrix(X_test, n_cols=self.n_features_in_) @ self.coef_

    def predictive_draws(self, X_test, rng: RngStream) -> np.ndarray:
        X_test = as_matrix(X_test, n_cols=self.n_features_in_)
        gam = self.last_draws_["gamma"]
        sig = self.last_draws_["sigma2"]
        mean = gam @ X_test.T
        noise = rng.standard_normal(mean.shape) * np.sqrt(sig)[:, None]
        return mean + noise

    def reset_chain(self) -> None:
        """Overdisperse the chain back to its starting point: projection at
        the prior center, unit row scalings."""
        self.state_.slots["phi_cur"] = self.state_.slots["phi0"].copy()
        self.state_.slots["kappa_cur"] = np.ones(self.m_)

    def extra_draws(self, n_draws: int) -> dict:
        """Extra sweeps at the current sufficient statistics."""
        return self.draw(n_draws).draws

    def tracked_nbytes(self) -> int:
        return self.state_.scss_nbytes()
