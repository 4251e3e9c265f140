import json
import math

import numpy as np
import pytest

from cdfilter.engine import (
    DrawBatch,
    Group,
    Partition,
    SamplerState,
    metropolis_step,
    run_stream,
    state_from_snapshot,
    state_to_snapshot,
    step_shard,
)
from cdfilter.errors import InvalidStateError, NumericOverflowError, StreamError
from cdfilter.numerics import RngStream

from helpers import mc_se


def make_state(seed=0):
    return SamplerState(RngStream(seed))


class FixedNormalModel:
    """One group whose conditional is N(0,1) regardless of statistics."""

    def __init__(self):
        self.groups = [
            Group(
                "only",
                params=("theta",),
                update_stats=lambda state, shard: state.set_stat("C", state.stat("C") + shard),
                sample=lambda state, shard, s, rng: {"theta": rng.standard_normal((s, 1))},
            )
        ]


class TestPartition:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            Partition([("a", "b"), ("b",)])

    def test_coverage_check(self):
        part = Partition([("a",), ("b",)])
        part.validate_covers(["a", "b"])
        with pytest.raises(ValueError, match="cover"):
            part.validate_covers(["a", "c"])


class TestStepShard:
    def test_single_draw_estimate_equals_draw(self):
        state = make_state()
        state.register_stat("C", 0.0)
        model = FixedNormalModel()
        _, batch = step_shard(state, 1.0, model, n_draws=1)
        assert batch.n_draws == 1
        np.testing.assert_array_equal(state.estimates["theta"], batch.draws["theta"][0])

    def test_zero_shard_leaves_stats_unchanged(self):
        state = make_state()
        state.register_stat("C", 0.0)
        model = FixedNormalModel()
        step_shard(state, 5.0, model, n_draws=2)
        before = state.stat("C")
        step_shard(state, 0.0, model, n_draws=2)
        assert state.stat("C") == before

    def test_stat_updates_once_per_shard_not_per_draw(self):
        state = make_state()
        state.register_stat("C", 0.0)
        model = FixedNormalModel()
        for _ in range(7):
            step_shard(state, 1.0, model, n_draws=50)
        assert state.scss["C"].update_count == 7
        assert state.t == 7

    def test_update_during_sampling_phase_is_rejected(self):
        state = make_state()
        state.register_stat("C", 0.0)

        def bad_sample(st, shard, s, rng):
            st.set_stat("C", 1.0)
            return {"x": np.zeros((s, 1))}

        model = type("M", (), {"groups": [Group("g", ("x",), None, bad_sample)]})()
        with pytest.raises(RuntimeError, match="once per shard"):
            step_shard(state, None, model, n_draws=1)

    def test_nonfinite_stat_names_the_statistic(self):
        state = make_state()
        state.register_stat("C11", 0.0)
        model = type(
            "M",
            (),
            {
                "groups": [
                    Group("g", (), lambda st, sh: st.set_stat("C11", float("inf")), None)
                ]
            },
        )()
        with pytest.raises(NumericOverflowError, match="C11"):
            step_shard(state, None, model, n_draws=1)

    def test_group_order_respected(self):
        state = make_state()
        order = []
        groups = [
            Group("first", (), lambda st, sh: order.append("first"), None),
            Group("second", (), lambda st, sh: order.append("second"), None),
        ]
        model = type("M", (), {"groups": groups})()
        step_shard(state, None, model, n_draws=1)
        assert order == ["first", "second"]
        assert state.last_trace == ["first", "second"]


class TestRunStream:
    def test_single_shard_reduces_to_step(self):
        state = make_state(3)
        state.register_stat("C", 0.0)
        batches = run_stream([2.0], FixedNormalModel(), state, n_draws=4)
        assert len(batches) == 1 and batches[0].t == 1

    def test_error_carries_shard_index(self):
        state = make_state()
        state.register_stat("C", 0.0)
        with pytest.raises(StreamError, match="shard 2") as err:
            run_stream([1.0, float("inf")], FixedNormalModel(), state, n_draws=1)
        assert err.value.shard_index == 2

    def test_empty_stream_rejected(self):
        state = make_state()
        with pytest.raises(StreamError):
            run_stream([], FixedNormalModel(), state, n_draws=1)


class TestMetropolis:
    def test_zero_step_returns_current(self):
        rng = RngStream(0)
        for _ in range(20):
            value, accepted = metropolis_step(1.3, lambda x: -0.5 * x**2, 0.0, rng)
            assert value == pytest.approx(1.3)
            assert accepted

    def test_standard_normal_stationarity(self):
        rng = RngStream(1)
        x = 0.0
        draws = np.empty(100_000)
        for i in range(draws.shape[0]):
            x, _ = metropolis_step(x, lambda v: -0.5 * v**2, 1.0, rng)
            draws[i] = x
        # autocorrelated chain: use a generous multiple of the iid standard error
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.05

    def test_zero_density_proposal_always_rejected(self):
        rng = RngStream(2)

        def target(v):
            return 0.0 if v <= 0.5 else -math.inf

        x = 0.0
        for _ in range(500):
            x, _ = metropolis_step(x, target, 5.0, rng)
            assert x <= 0.5

    def test_invalid_current_state(self):
        with pytest.raises(InvalidStateError):
            metropolis_step(2.0, lambda v: -math.inf, 1.0, RngStream(0))


class TestSnapshot:
    def test_roundtrip_bit_exact_through_json(self):
        state = make_state(42)
        state.register_stat("C", np.arange(6, dtype=float).reshape(2, 3) / 7.0)
        state.estimates["beta"] = np.array([0.1, -0.2])
        state.slots["window"] = np.linspace(0, 1, 5)
        state.rng.standard_normal(13)
        state.t = 9
        snap = json.loads(json.dumps(state_to_snapshot(state)))
        restored = state_from_snapshot(snap)
        assert restored.t == 9
        np.testing.assert_array_equal(restored.stat("C"), state.stat("C"))
        np.testing.assert_array_equal(restored.estimates["beta"], state.estimates["beta"])
        np.testing.assert_array_equal(restored.slots["window"], state.slots["window"])
        np.testing.assert_array_equal(
            restored.rng.standard_normal(32), state.rng.standard_normal(32)
        )

    def test_version_checked(self):
        snap = state_to_snapshot(make_state())
        snap["version"] = 99
        with pytest.raises(ValueError, match="version"):
            state_from_snapshot(snap)
