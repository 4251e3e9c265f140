import math

import numpy as np
import pytest

from cdfilter.errors import ShardShapeError
from cdfilter.models.anova import (
    CdfAnova,
    GibbsAnova,
    mu_conditional,
    sigma2_conditional,
    tau2_conditional,
    zeta_conditional,
)
from cdfilter.numerics import RngStream

from helpers import mc_se, tv_draws_vs_density


def anova_shards(rng, n_shards, zeta0, sigma0=10.0, n=10):
    k = len(zeta0)
    zeta0 = np.asarray(zeta0)
    for _ in range(n_shards):
        yield zeta0[:, None] + sigma0 * rng.standard_normal((k, n))


class TestConditionals:
    def test_single_group_unit_variances(self):
        # tau^2 = sigma^2 = 1: zeta | - ~ N((S1 + mu) / (nt + 1), 1 / (nt + 1))
        c1 = np.array([7.0])  # stand-in for tau^2 * S1 with tau = 1
        mean, var = zeta_conditional(c1, 1.0, 2.0, 1.0, nt=4)
        assert mean[0] == pytest.approx((7.0 + 2.0) / 5.0)
        assert var == pytest.approx(1.0 / 5.0)

    def test_zero_tau_collapses_to_grand_mean(self):
        mean, var = zeta_conditional(np.zeros(3), 4.0, 1.7, 0.0, nt=12)
        np.testing.assert_allclose(mean, 1.7)
        assert var == 0.0

    def test_mu_conditional_mean_is_c22_over_k(self):
        m, v = mu_conditional(12.0, 2.0, 10)
        assert m == pytest.approx(1.2)
        assert v == pytest.approx(0.2)

    def test_tau2_prior_recovered_at_zero_deviation(self):
        # zeta_i == mu for all i: rate collapses to the prior rate
        shape, rate = tau2_conditional(1.0, 1.0, c21=4.0, c22=4.0, mu=1.0, k=4)
        assert shape == pytest.approx(3.0)
        assert rate == pytest.approx(1.0)

    def test_frozen_estimates_match_exact_conditional(self):
        # with mu, tau, sigma at fixed values and c1 = tau^2 * S, the
        # filtered conditional equals the exact one at those values
        rng = np.random.default_rng(0)
        si = rng.normal(size=5) * 10
        tau2, sigma2, mu, nt = 0.3, 2.5, 4.0, 60
        mean_f, var_f = zeta_conditional(tau2 * si, sigma2, mu, tau2, nt)
        mean_e = (tau2 * si + sigma2 * mu) / (nt * tau2 + sigma2)
        var_e = tau2 * sigma2 / (nt * tau2 + sigma2)
        np.testing.assert_allclose(mean_f, mean_e, atol=1e-14)
        assert var_f == pytest.approx(var_e)


class TestCdfAnova:
    def test_c2_is_recomputed_from_current_estimate(self):
        rng = np.random.default_rng(1)
        est = CdfAnova(n_draws=50, random_state=0)
        for shard in anova_shards(rng, 5, zeta0=np.full(4, 2.0), sigma0=1.0, n=8):
            est.partial_fit(shard)
            zeta_hat = est.state_.estimate("zeta")
            assert est.state_.stat("C21") == pytest.approx(float(zeta_hat @ zeta_hat))
            assert est.state_.stat("C22") == pytest.approx(float(zeta_hat.sum()))
            # Cauchy-Schwarz invariant
            assert est.state_.stat("C21") >= est.state_.stat("C22") ** 2 / 4 - 1e-12

    def test_scss_update_counts(self):
        rng = np.random.default_rng(2)
        est = CdfAnova(n_draws=25, random_state=0)
        for shard in anova_shards(rng, 6, zeta0=np.zeros(3), sigma0=1.0, n=5):
            est.partial_fit(shard)
        for sid in ("C1", "C21", "C22", "SI", "SI2"):
            assert est.state_.scss[sid].update_count == 6

    def test_shard_shape_checked(self):
        rng = np.random.default_rng(3)
        est = CdfAnova(n_draws=10, random_state=0)
        est.partial_fit(rng.normal(size=(3, 5)))
        with pytest.raises(ShardShapeError):
            est.partial_fit(rng.normal(size=(4, 5)))

    @pytest.mark.parametrize("mode", ["refresh", "increment"])
    def test_c1_reproduces_tau2_times_cumulative_sums_under_constant_tau(self, mode):
        # with tau frozen both readings agree: C1 = tau^2 * S_i
        rng = np.random.default_rng(4)
        est = CdfAnova(n_draws=30, c1_mode=mode, random_state=5)
        shards = list(anova_shards(rng, 4, zeta0=np.full(3, 1.0), sigma0=0.5, n=6))
        tau_fixed = 0.7
        for i, shard in enumerate(shards):
            if hasattr(est, "state_"):
                est.state_.estimates["tau"] = tau_fixed
            est.partial_fit(shard)
            est.state_.estimates["tau"] = tau_fixed
        si = sum(sh.sum(axis=1) for sh in shards)
        got = est.state_.stat("C1")
        if mode == "refresh":
            want = tau_fixed**2 * si
        else:
            # the first shard arrived under the tau = 1 initialization
            s1 = shards[0].sum(axis=1)
            want = 1.0**2 * s1 + tau_fixed**2 * (si - s1)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_cumulative_mode_double_counts(self):
        rng = np.random.default_rng(5)
        shards = list(anova_shards(rng, 3, zeta0=np.full(2, 1.0), sigma0=0.5, n=4))
        a = CdfAnova(n_draws=10, c1_mode="increment", random_state=0)
        b = CdfAnova(n_draws=10, c1_mode="cumulative", random_state=0)
        for sh in shards:
            a.partial_fit(sh)
            b.partial_fit(sh)
        assert np.all(np.abs(b.state_.stat("C1")) > np.abs(a.state_.stat("C1")))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="c1_mode"):
            CdfAnova(c1_mode="bogus").partial_fit(np.zeros((2, 3)))

    def test_paper_design_smoke(self):
        # reduced horizon: estimates drift toward the true group means
        rng = np.random.default_rng(6)
        zeta0 = 4.0 + 0.1 * rng.standard_normal(10)
        est = CdfAnova(n_draws=100, random_state=1)
        data_rng = np.random.default_rng(7)
        for shard in anova_shards(data_rng, 150, zeta0=zeta0, sigma0=10.0, n=10):
            est.partial_fit(shard)
        assert np.mean((est.group_means_ - zeta0) ** 2) < 1.5


class TestGibbsAnova:
    def test_prior_only_tau2_and_sigma2_match_priors(self):
        est = GibbsAnova.from_dim(4, n_draws=1, tau_a=3.0, tau_b=2.0,
                                  sig_a=2.5, sig_b=4.0, random_state=0)
        st = est.state_
        st.slots["mu_cur"] = 0.0
        st.slots["tau2_cur"] = 1.0
        taus, sigmas = [], []
        for _ in range(20_000):
            batch = est.draw(1)
            taus.append(batch.draws["tau2"][0])
            sigmas.append(batch.draws["sigma2"][0])
        taus, sigmas = np.array(taus), np.array(sigmas)
        # IG(3,2) mean=1, IG(2.5,4) mean=4/1.5
        assert abs(taus.mean() - 1.0) < 6 * mc_se(taus)
        assert abs(sigmas.mean() - 4.0 / 1.5) < 6 * mc_se(sigmas)

    def test_one_group_grid_posterior_tv(self):
        rng = np.random.default_rng(8)
        y = 3.0 + 2.0 * rng.standard_normal((1, 40))
        sig_a, sig_b = 1.0, 1.0
        est = GibbsAnova(n_draws=10_000, sig_a=sig_a, sig_b=sig_b, random_state=9)
        est.partial_fit(y)
        draws = est.last_draws_["zeta"][:, 0]
        n = y.size

        def log_post(z):
            ssr = float(np.sum((y - z) ** 2))
            return -(sig_a + n / 2.0) * math.log(sig_b + 0.5 * ssr)

        grid = np.linspace(draws.mean() - 6 * draws.std(),
                           draws.mean() + 6 * draws.std(), 801)
        assert tv_draws_vs_density(draws, log_post, grid) < 0.05

    def test_suffstats_shard_order_free(self):
        rng = np.random.default_rng(10)
        shards = [rng.normal(size=(3, 5)) for _ in range(4)]
        a = GibbsAnova(n_draws=1, random_state=0)
        b = GibbsAnova(n_draws=1, random_state=0)
        for sh in shards:
            a.partial_fit(sh)
        for sh in reversed(shards):
            b.partial_fit(sh)
        np.testing.assert_allclose(a.state_.stat("SI"), b.state_.stat("SI"), atol=1e-12)
        np.testing.assert_allclose(a.state_.stat("SI2"), b.state_.stat("SI2"), atol=1e-12)
