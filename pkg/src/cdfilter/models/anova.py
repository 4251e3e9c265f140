"""One-way ANOVA with k fixed groups.

Model: y_ij = zeta_i + eps, eps ~ N(0, sigma^2); zeta_i ~ N(mu, tau^2);
priors pi(mu) prop 1, tau^2 ~ IG(tau_a, tau_b), sigma^2 ~ IG(sig_a, sig_b).
Shards arrive as a (k, n) block of n fresh observations per group.

The filtered sampler partitions parameters into {zeta, sigma^2} and
{mu, tau^2}: the group-mean block conditions on a propagated k-vector that
stands in for tau^2 * (cumulative group sums), while sigma^2 keeps its exact
conditional through the cumulative group sufficient statistics; the
hierarchical block conditions on the current zeta estimate only.
"""

from __future__ import annotations

import numpy as np

from ..base import StreamingSampler, as_matrix
from ..errors import ShardShapeError
from ..engine import DrawBatch, Group, SamplerState, step_shard
from ..numerics import RngStream, sample_invgamma

__all__ = [
    "zeta_conditional",
    "sigma2_conditional",
    "mu_conditional",
    "tau2_conditional",
    "CdfAnova",
    "GibbsAnova",
]


def zeta_conditional(c1, sigma2, mu, tau2, nt):
    """Per-group mean and variance of the group-mean conditional.

    ``c1`` plays the role of tau^2 times the cumulative group sums; with the
    other parameters at their running estimates this reproduces the exact
    conditional N((tau^2 S_i + sigma^2 mu)/(nt tau^2 + sigma^2), ...).
    """
    denom = nt * tau2 + sigma2
    mean = (c1 + sigma2 * mu) / denom
    var = tau2 * sigma2 / denom
    return mean, var


def sigma2_conditional(sig_a, sig_b, si, si2, zeta, nt):
    """Shape and rate of the noise-variance conditional (exact, via the
    cumulative group sums and squared norms)."""
    k = si.shape[0]
    rate = sig_b + 0.5 * float(np.sum(si2 - 2.0 * zeta * si + nt * zeta**2))
    return sig_a + 0.5 * nt * k, rate


def mu_conditional(c22, tau2, k):
    """Flat-prior grand-mean conditional: N(c22 / k, tau^2 / k)."""
    return c22 / k, tau2 / k


def tau2_conditional(tau_a, tau_b, c21, c22, mu, k):
    """Shape and rate of the group-spread conditional, written in terms of
    the squared norm and sum of the group-mean values."""
    rate = tau_b + 0.5 * (c21 - 2.0 * mu * c22 + k * mu**2)
    return tau_a + 0.5 * k, rate


class CdfAnova(StreamingSampler):
    """Filtered one-way ANOVA sampler.

    ``c1_mode`` selects how the propagated group-mean statistic absorbs the
    running spread estimate:

    - ``"refresh"`` (default): rebuild it as tau_hat^2 times the cumulative
      group sums each shard, the same overwrite semantics the hierarchical
      block uses.  The group sums are already propagated for the noise
      conditional, and this keeps the group-mean estimates consistent when
      tau_hat moves over the stream.
    - ``"increment"``: accumulate tau_hat^2 times the per-shard sums.  Past
      shards then keep the spread weight they arrived under; a drifting
      tau_hat leaves a permanent multiplicative bias on the group means.
    - ``"cumulative"``: accumulate tau_hat^2 times the cumulative sums,
      which double-counts early data.  Comparison runs only.
    """

    def __init__(self, n_draws: int = 500, tau_a: float = 1.0, tau_b: float = 1.0,
                 sig_a: float = 1.0, sig_b: float = 1.0,
                 c1_mode: str = "refresh", random_state: int | None = None):
        self.n_draws = n_draws
        self.tau_a = tau_a
        self.tau_b = tau_b
        self.sig_a = sig_a
        self.sig_b = sig_b
        self.c1_mode = c1_mode
        self.random_state = random_state

    def _init_state(self, y: np.ndarray) -> None:
        if self.c1_mode not in ("refresh", "increment", "cumulative"):
            raise ValueError(f"unknown c1_mode {self.c1_mode!r}")
        k = y.shape[0]
        state = SamplerState(self._rng_root())
        state.register_stat("C1", np.zeros(k))
        state.register_stat("C21", 0.0)
        state.register_stat("C22", 0.0)
        state.register_stat("SI", np.zeros(k))
        state.register_stat("SI2", np.zeros(k))
        state.register_stat("NT", 0.0)
        state.estimates["zeta"] = np.zeros(k)
        state.estimates["sigma2"] = float(np.var(y)) if np.var(y) > 0 else 1.0
        state.estimates["mu"] = float(np.mean(y))
        state.estimates["tau"] = 1.0
        self.state_ = state
        self.n_groups_ = k
        self.groups_ = [
            Group("zeta_sigma2", params=("zeta", "sigma2"),
                  update_stats=self._update_group1_stats, sample=self._sample_group1,
                  estimate=self._estimate_group1),
            Group("mu_tau2", params=("mu", "tau"),
                  update_stats=self._update_group2_stats, sample=self._sample_group2,
                  estimate=self._estimate_group2),
        ]

    @property
    def groups(self):
        return self.groups_

    def validate_shard(self, state, shard) -> None:
        as_matrix(shard, name="y", n_cols=None)
        if shard.shape[0] != self.n_groups_:
            raise ShardShapeError(
                f"shard has {shard.shape[0]} groups, expected {self.n_groups_}"
            )

    def _update_group1_stats(self, state: SamplerState, y: np.ndarray) -> None:
        shard_sums = y.sum(axis=1)
        state.add_to_stat("SI", shard_sums)
        state.add_to_stat("SI2", (y**2).sum(axis=1))
        state.add_to_stat("NT", y.shape[1])
        tau2 = state.estimate("tau") ** 2
        if self.c1_mode == "refresh":
            state.set_stat("C1", tau2 * state.stat("SI"))
        elif self.c1_mode == "increment":
            state.add_to_stat("C1", tau2 * shard_sums)
        else:  # cumulative
            state.add_to_stat("C1", tau2 * state.stat("SI"))

    def _sample_group1(self, state, y, n_draws, rng: RngStream):
        k = self.n_groups_
        c1, si, si2 = state.stat("C1"), state.stat("SI"), state.stat("SI2")
        nt = state.stat("NT")
        mu, tau2 = state.estimate("mu"), state.estimate("tau") ** 2
        sigma2 = state.estimate("sigma2")
        zetas = np.empty((n_draws, k))
        sigmas = np.empty(n_draws)
        znorm = rng.standard_normal((n_draws, k))
        for s in range(n_draws):
            mean, var = zeta_conditional(c1, sigma2, mu, tau2, nt)
            zeta = mean + np.sqrt(var) * znorm[s]
            shape, rate = sigma2_conditional(self.sig_a, self.sig_b, si, si2, zeta, nt)
            sigma2 = float(sample_invgamma(shape, rate, rng))
            zetas[s] = zeta
            sigmas[s] = sigma2
        return {"zeta": zetas, "sigma2": sigmas}

    def _estimate_group1(self, state, draws):
        return {"zeta": draws["zeta"].mean(axis=0),
                "sigma2": float(draws["sigma2"].mean())}

    def _update_group2_stats(self, state: SamplerState, y) -> None:
        zeta_hat = state.estimate("zeta")
        # recomputed from the current estimate each shard, not accumulated
        state.set_stat("C21", float(zeta_hat @ zeta_hat))
        state.set_stat("C22", float(zeta_hat.sum()))

    def _sample_group2(self, state, y, n_draws, rng: RngStream):
        k = self.n_groups_
        c21, c22 = state.stat("C21"), state.stat("C22")
        tau2 = state.estimate("tau") ** 2
        mus = np.empty(n_draws)
        taus = np.empty(n_draws)
        znorm = rng.standard_normal(n_draws)
        for s in range(n_draws):
            m, v = mu_conditional(c22, tau2, k)
            mu = m + np.sqrt(v) * znorm[s]
            shape, rate = tau2_conditional(self.tau_a, self.tau_b, c21, c22, mu, k)
            tau2 = float(sample_invgamma(shape, rate, rng))
            mus[s] = mu
            taus[s] = tau2
        return {"mu": mus, "tau2": taus}

    def _estimate_group2(self, state, draws):
        return {"mu": float(draws["mu"].mean()),
                "tau": float(np.sqrt(draws["tau2"]).mean())}

    def partial_fit(self, y):
        y = as_matrix(y, name="y")
        if not hasattr(self, "state_"):
            self._init_state(y)
        _, batch = step_shard(self.state_, y, self, self.n_draws)
        self._record(batch)
        return self

    @property
    def group_means_(self) -> np.ndarray:
        return self.state_.estimate("zeta")


class GibbsAnova(StreamingSampler):
    """Exact sequential Gibbs sampler over group sufficient statistics."""

    def __init__(self, n_draws: int = 500, tau_a: float = 1.0, tau_b: float = 1.0,
                 sig_a: float = 1.0, sig_b: float = 1.0,
                 random_state: int | None = None):
        self.n_draws = n_draws
        self.tau_a = tau_a
        self.tau_b = tau_b
        self.sig_a = sig_a
        self.sig_b = sig_b
        self.random_state = random_state

    def _init_state(self, k: int) -> None:
        state = SamplerState(self._rng_root())
        state.register_stat("SI", np.zeros(k))
        state.register_stat("SI2", np.zeros(k))
        state.register_stat("NT", 0.0)
        state.slots["zeta_cur"] = np.zeros(k)
        state.slots["sigma2_cur"] = 1.0
        state.slots["mu_cur"] = 0.0
        state.slots["tau2_cur"] = 1.0
        state.estimates["zeta"] = np.zeros(k)
        self.state_ = state
        self.n_groups_ = k

    @classmethod
    def from_dim(cls, k: int, **kwargs) -> "GibbsAnova":
        est = cls(**kwargs)
        est._init_state(k)
        return est

    def partial_fit(self, y):
        y = as_matrix(y, name="y")
        if not hasattr(self, "state_"):
            self._init_state(y.shape[0])
            self.state_.slots["sigma2_cur"] = float(np.var(y)) if np.var(y) > 0 else 1.0
            self.state_.slots["mu_cur"] = float(np.mean(y))
        st = self.state_
        if y.shape[0] != self.n_groups_:
            raise ShardShapeError(f"shard has {y.shape[0]} groups, expected {self.n_groups_}")
        st.add_to_stat("SI", y.sum(axis=1))
        st.add_to_stat("SI2", (y**2).sum(axis=1))
        st.add_to_stat("NT", y.shape[1])
        st.t += 1
        self._record(self.draw(self.n_draws))
        return self

    def draw(self, n_draws: int) -> DrawBatch:
        """Run sweeps of zeta, sigma^2, mu, tau^2 on current statistics."""
        st = self.state_
        rng = st.rng
        k = self.n_groups_
        si, si2, nt = st.stat("SI"), st.stat("SI2"), st.stat("NT")
        sigma2 = st.slots["sigma2_cur"]
        mu = st.slots["mu_cur"]
        tau2 = st.slots["tau2_cur"]
        zetas = np.empty((n_draws, k))
        sigmas = np.empty(n_draws)
        mus = np.empty(n_draws)
        taus = np.empty(n_draws)
        zeta_norm = rng.standard_normal((n_draws, k))
        mu_norm = rng.standard_normal(n_draws)
        for s in range(n_draws):
            denom = nt * tau2 + sigma2
            zeta = (tau2 * si + sigma2 * mu) / denom + np.sqrt(
                tau2 * sigma2 / denom
            ) * zeta_norm[s]
            shape, rate = sigma2_conditional(self.sig_a, self.sig_b, si, si2, zeta, nt)
            sigma2 = float(sample_invgamma(shape, rate, rng))
            mu = float(zeta.mean() + np.sqrt(tau2 / k) * mu_norm[s])
            rate_tau = self.tau_b + 0.5 * float(np.sum((zeta - mu) ** 2))
            tau2 = float(sample_invgamma(self.tau_a + 0.5 * k, rate_tau, rng))
            zetas[s] = zeta
            sigmas[s] = sigma2
            mus[s] = mu
            taus[s] = tau2
        st.slots["zeta_cur"] = zetas[-1]
        st.slots["sigma2_cur"] = sigma2
        st.slots["mu_cur"] = mu
        st.slots["tau2_cur"] = tau2
        st.estimates["zeta"] = zetas.mean(axis=0)
        st.estimates["sigma2"] = float(sigmas.mean())
        st.estimates["mu"] = float(mus.mean())
        st.estimates["tau"] = float(np.sqrt(taus).mean())
        return DrawBatch(t=st.t, draws={"zeta": zetas, "sigma2": sigmas,
                                        "mu": mus, "tau2": taus})

    @property
    def group_means_(self) -> np.ndarray:
        return self.state_.estimate("zeta")
