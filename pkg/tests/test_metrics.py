import math

import numpy as np
import pytest
from scipy.special import ndtr

from cdfilter.metrics import (
    accuracy_tv,
    bootstrap_se,
    ess_until,
    interval_coverage,
    mse,
    mspe,
)
from cdfilter.numerics import RngStream


class TestMse:
    def test_exact_match_is_zero(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_arithmetic(self):
        assert mse([1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mse([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mse([1.0], [1.0, 2.0])


class TestMspe:
    def test_perfect_predictions(self):
        assert mspe([3.0, 4.0], [3.0, 4.0]) == 0.0

    def test_zero_predictor_on_noise(self):
        # predictor == 0 on y = signal + N(0, 4): MSPE ~ 4 + var(signal)
        rng = np.random.default_rng(0)
        signal = rng.normal(0.0, 1.0, size=200_000)
        y = signal + rng.normal(0.0, 2.0, size=signal.size)
        got = mspe(np.zeros_like(y), y)
        assert abs(got - 5.0) < 0.1


class TestIntervalCoverage:
    def test_degenerate_draws_at_truth(self):
        draws = np.ones((100, 3))
        cov, length = interval_coverage(draws, np.ones(3))
        assert cov == 1.0
        assert length == 0.0

    def test_nominal_coverage_monte_carlo(self):
        # flat-prior toy: y ~ N(0,1) once per rep, posterior N(y,1); the
        # 95% interval then covers truth 0 with probability exactly 0.95
        rng = RngStream(1)
        hits = []
        for _ in range(10_000):
            y = float(rng.standard_normal())
            draws = y + rng.standard_normal(400)
            cov, _ = interval_coverage(draws, [0.0])
            hits.append(cov)
        assert abs(np.mean(hits) - 0.95) < 0.01

    def test_few_draws_warns(self):
        with pytest.warns(UserWarning, match="unstable"):
            interval_coverage(np.random.default_rng(0).normal(size=(10, 1)), [0.0])


class TestAccuracyTv:
    def test_identical_samples(self):
        x = RngStream(2).standard_normal(5000)
        assert accuracy_tv(x, x) >= 0.99

    def test_disjoint_supports(self):
        rng = RngStream(3)
        a = rng.standard_normal(10_000)
        b = rng.standard_normal(10_000) + 10.0
        assert accuracy_tv(a, b) <= 0.01

    def test_analytic_normal_shift(self):
        # TV(N(0,1), N(1,1)) = 2*Phi(0.5) - 1, so accuracy = 1 - that
        rng = RngStream(4)
        a = rng.standard_normal(10_000)
        b = rng.standard_normal(10_000) + 1.0
        want = 1.0 - (2.0 * ndtr(0.5) - 1.0)
        assert want == pytest.approx(0.617, abs=1e-3)
        assert abs(accuracy_tv(a, b) - want) < 0.03

    def test_symmetry_and_shuffle_invariance(self):
        rng = RngStream(5)
        a = rng.standard_normal(2000)
        b = 0.5 + rng.standard_normal(2000)
        ab = accuracy_tv(a, b)
        assert ab == pytest.approx(accuracy_tv(b, a), abs=1e-12)
        shuffled = a.copy()
        np.random.default_rng(0).shuffle(shuffled)
        assert accuracy_tv(shuffled, b) == pytest.approx(ab, abs=1e-12)

    def test_mean_shift_is_not_scored_as_identical(self):
        # the metric compares distributions: a shifted copy of the sample
        # must land clearly below the identical-distribution ceiling
        rng = RngStream(6)
        a = rng.standard_normal(5000)
        assert accuracy_tv(a, a + 0.5) < 0.95

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            accuracy_tv(np.zeros(10), np.zeros(10))

    def test_point_mass_cases(self):
        a = np.full(200, 2.0)
        assert accuracy_tv(a, a) == 1.0
        assert accuracy_tv(a, np.full(200, 3.0)) == 0.0
        spread = RngStream(7).standard_normal(500)
        val = accuracy_tv(a, spread)
        assert 0.0 <= val < 0.5


class TestEssUntil:
    def test_first_batch_below(self):
        assert ess_until([(500, 4.0), (1000, 3.0)], threshold=5.0) == 500

    def test_never_below(self):
        assert ess_until([(500, 9.0), (1000, 8.0)], threshold=5.0) == math.inf

    def test_crossing_mid_stream(self):
        trace = [(100, 9.0), (200, 6.0), (300, 4.9), (400, 4.0)]
        assert ess_until(trace, threshold=5.0) == 300


class TestBootstrapSe:
    def test_single_value_is_nan(self):
        assert math.isnan(bootstrap_se([1.0]))

    def test_scales_like_standard_error(self):
        rng = np.random.default_rng(8)
        vals = rng.normal(size=400)
        se = bootstrap_se(vals, n_boot=500)
        assert abs(se - 1.0 / 20.0) < 0.01
