import math

import numpy as np
import pytest
from scipy.stats import truncnorm

from cdfilter.models.dlm import (
    CdfDlm,
    phi_mh_chain,
    phi_moments,
    sigma2_rate,
    sweep_latents,
    tau2_rate,
)
from cdfilter.numerics import RngStream

from helpers import tv_draws_vs_draws


def simulate(rng, T, phi0=0.8, tau0=math.sqrt(2.0), sig0=0.1, h0=None):
    h0 = tau0**2 / (1 - phi0**2) if h0 is None else h0
    theta = math.sqrt(h0) * float(rng.standard_normal())
    ys, thetas = [], []
    for _ in range(T):
        theta = phi0 * theta + tau0 * float(rng.standard_normal())
        thetas.append(theta)
        ys.append(theta + sig0 * float(rng.standard_normal()))
    return np.array(ys), np.array(thetas)


class TestRates:
    def test_tau2_rate_brute_force(self):
        # assemble a full path and check the frozen + window split exactly
        rng = np.random.default_rng(0)
        path = list(rng.normal(size=9))
        phi, d0 = 0.6, 1.3
        anchor_idx = 4  # path[0..4] frozen (path[0] playing theta_0)
        frozen, window = path[: anchor_idx + 1], path[anchor_idx + 1:]
        c2 = 0.5 * sum(v**2 for v in frozen[:-1])
        c3 = 0.5 * sum(a * b for a, b in zip(frozen[:-1], frozen[1:]))
        c4 = 0.5 * sum(v**2 for v in frozen[1:])
        got = tau2_rate(d0, c2, c3, c4, phi, window, anchor=frozen[-1])
        want = d0 + 0.5 * sum(
            (path[s] - phi * path[s - 1]) ** 2 for s in range(1, len(path))
        )
        assert got == pytest.approx(want, rel=1e-12)

    def test_sigma2_rate_brute_force(self):
        rng = np.random.default_rng(1)
        path = list(rng.normal(size=8))
        ys = list(rng.normal(size=7))
        frozen, window = path[:4], path[4:]
        c1 = 0.5 * sum((y - th) ** 2 for y, th in zip(ys[:3], frozen[1:]))
        got = sigma2_rate(2.0, c1, window, ys[3:])
        want = 2.0 + 0.5 * sum((y - th) ** 2 for y, th in zip(ys, path[1:]))
        assert got == pytest.approx(want, rel=1e-12)

    def test_phi_moments_brute_force(self):
        rng = np.random.default_rng(2)
        path = list(rng.normal(size=6))
        frozen, window = path[:3], path[3:]
        c2 = 0.5 * sum(v**2 for v in frozen[:-1])
        c3 = 0.5 * sum(a * b for a, b in zip(frozen[:-1], frozen[1:]))
        num, den = phi_moments(c2, c3, window, anchor=frozen[-1])
        want_num = sum(path[s] * path[s - 1] for s in range(1, len(path)))
        want_den = sum(path[s - 1] ** 2 for s in range(1, len(path)))
        assert num == pytest.approx(want_num, rel=1e-12)
        assert den == pytest.approx(want_den, rel=1e-12)


class TestPhiMh:
    def test_constraint_never_violated(self):
        rng = RngStream(0)
        phi = 0.999
        for _ in range(200):
            phi, _ = phi_mh_chain(phi, num=0.0, den=0.0, tau2=1.0, n_steps=5,
                                  rng=rng, step_size=0.5)[0], None
            phi = float(phi)
            assert abs(phi) < 1.0

    def test_matches_direct_truncated_normal(self):
        # window-only target (C = 0): N(num/den, tau2/den) on (-1, 1)
        rng = RngStream(1)
        num, den, tau2 = 30.0, 40.0, 2.0
        chain = []
        phi = 0.0
        for _ in range(20_000):
            phi, _ = phi_mh_chain(phi, num, den, tau2, n_steps=3, rng=rng)
            chain.append(phi)
        chain = np.array(chain[2_000:])
        mu, sd = num / den, math.sqrt(tau2 / den)
        a, b = (-1.0 - mu) / sd, (1.0 - mu) / sd
        direct = truncnorm.rvs(a, b, loc=mu, scale=sd, size=20_000,
                               random_state=np.random.default_rng(7))
        assert tv_draws_vs_draws(chain, direct) < 0.05


class TestSweepLatents:
    def test_kalman_one_step_oracle(self):
        # fixed (phi, tau2, sigma2): theta_2 | y_1, y_2 moments via the
        # Kalman filter must match the Gibbs draws
        phi, tau2, sigma2, h0 = 0.7, 0.5, 0.2, 4.0
        y = [1.1, -0.4]
        # filter forward
        pred_m, pred_v = 0.0, phi**2 * h0 + tau2
        k = pred_v / (pred_v + sigma2)
        m1, v1 = pred_m + k * (y[0] - pred_m), (1 - k) * pred_v
        pred_m, pred_v = phi * m1, phi**2 * v1 + tau2
        k = pred_v / (pred_v + sigma2)
        m2, v2 = pred_m + k * (y[1] - pred_m), (1 - k) * pred_v
        rng = RngStream(3)
        theta = [0.0, 0.0]
        draws = []
        for i in range(30_000):
            z = rng.standard_normal(3)
            sweep_latents(theta, y, anchor=0.0, phi=phi, tau2=tau2,
                          sigma2=sigma2, z=z, theta0_update=True, h0=h0)
            draws.append(theta[1])
        draws = np.array(draws[3_000:])
        assert draws.mean() == pytest.approx(m2, abs=4 * draws.std() / math.sqrt(len(draws)) + 5e-3)
        assert draws.var() == pytest.approx(v2, rel=0.06)


class TestCdfDlm:
    def test_full_window_never_uses_surrogates(self):
        ys, _ = simulate(np.random.default_rng(4), T=30)
        est = CdfDlm(n_draws=20, n_mh=40, window=100, random_state=0)
        for y in ys:
            est.partial_fit(y)
        for cid in ("C1", "C2", "C3", "C4"):
            assert est.state_.stat(cid) == 0.0
            assert est.state_.scss[cid].update_count == 0

    def test_frozen_estimates_are_immutable(self):
        ys, _ = simulate(np.random.default_rng(5), T=40)
        est = CdfDlm(n_draws=10, n_mh=20, window=12, random_state=1)
        snapshots = []
        for y in ys:
            est.partial_fit(y)
            snapshots.append(list(est.state_.slots["frozen"]))
        # theta_0's slot is a placeholder until the first freeze event, so
        # immutability is asserted from the step the window first overflows
        for earlier, later in zip(snapshots[11:-1], snapshots[12:]):
            np.testing.assert_array_equal(earlier, later[: len(earlier)])

    def test_surrogate_update_counts_match_freeze_events(self):
        T, b = 25, 10
        ys, _ = simulate(np.random.default_rng(6), T=T)
        est = CdfDlm(n_draws=10, n_mh=20, window=b, random_state=2)
        for y in ys:
            est.partial_fit(y)
        assert est.state_.scss["C1"].update_count == T - b + 1
        # window never exceeds the budget
        assert len(est.state_.slots["win_theta"]) == b - 1

    def test_latent_estimates_track_truth_on_reduced_design(self):
        rng = np.random.default_rng(7)
        ys, thetas = simulate(rng, T=300)
        est = CdfDlm(n_draws=50, n_mh=100, window=50, random_state=3)
        for y in ys:
            est.partial_fit(y)
        path = est.latent_path_estimate_
        assert path.shape == (300,)
        assert np.mean((path - thetas) ** 2) < 0.05
        assert abs(est.phi_estimate_ - 0.8) < 0.15
        assert 0.05 < est.mh_acceptance_ < 0.95

    def test_rejects_nonfinite_observation(self):
        est = CdfDlm(n_draws=5, n_mh=10, random_state=0)
        with pytest.raises(Exception):
            est.partial_fit(float("nan"))
