"""Generic conditional density filtering machinery.

The driver iterates a fixed, ordered partition of the model parameters.  For
each group it (a) lets the model fold the incoming shard into the group's
propagated statistics exactly once, (b) draws S sweeps from the approximate
conditionals, and (c) refreshes the group's point estimates from those draws
(or from model-supplied closed forms).  Statistics are write-locked during
sampling, which is what makes the per-shard (rather than per-iteration)
update cost an enforced invariant instead of a convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidStateError, NumericOverflowError, ShardShapeError, StreamError
from .numerics import RngStream

SNAPSHOT_VERSION = 1


@dataclass
class Partition:
    """Ordered, pairwise-disjoint parameter groups covering the full set."""

    groups: Sequence[tuple[str, ...]]

    def __post_init__(self):
        seen: set[str] = set()
        for g in self.groups:
            dup = seen.intersection(g)
            if dup:
                raise ValueError(f"parameter groups overlap on {sorted(dup)}")
            seen.update(g)
        self.all_params = seen

    def validate_covers(self, params: Iterable[str]) -> None:
        missing = set(params) - self.all_params
        if missing:
            raise ValueError(f"partition does not cover parameters {sorted(missing)}")


class SurrogateStat:
    """One named propagated aggregate with an update counter.

    Dimensions are fixed after the first update; values must stay finite.
    """

    __slots__ = ("id", "value", "update_count")

    def __init__(self, stat_id: str, value):
        self.id = stat_id
        self.value = _as_stat_value(value)
        self.update_count = 0

    def set(self, value) -> None:
        value = _as_stat_value(value)
        if np.shape(value) != np.shape(self.value):
            raise ValueError(
                f"statistic '{self.id}' changed shape "
                f"{np.shape(self.value)} -> {np.shape(value)}"
            )
        if not np.all(np.isfinite(value)):
            raise NumericOverflowError(self.id)
        self.value = value
        self.update_count += 1

    @property
    def nbytes(self) -> int:
        v = self.value
        return v.nbytes if isinstance(v, np.ndarray) else 8


def _as_stat_value(value):
    if isinstance(value, np.ndarray):
        return np.asarray(value, dtype=float)
    return float(value)


class SamplerState:
    """Mutable per-model record: shard counter, statistics, estimates, RNG.

    ``slots`` holds model-private state that is not a propagated statistic
    (moving windows, latent paths); it is still covered by snapshots.
    """

    def __init__(self, rng: RngStream):
        self.t = 0
        self.rng = rng
        self.scss: dict[str, SurrogateStat] = {}
        self.estimates: dict[str, Any] = {}
        self.slots: dict[str, Any] = {}
        self.last_trace: list[str] = []
        self._stats_locked = False

    # -- statistics -------------------------------------------------------
    def register_stat(self, stat_id: str, init_value) -> SurrogateStat:
        if stat_id in self.scss:
            raise ValueError(f"statistic '{stat_id}' already registered")
        stat = SurrogateStat(stat_id, init_value)
        self.scss[stat_id] = stat
        return stat

    def stat(self, stat_id: str):
        return self.scss[stat_id].value

    def set_stat(self, stat_id: str, value) -> None:
        if self._stats_locked:
            raise RuntimeError(
                f"statistic '{stat_id}' updated during the sampling phase; "
                "propagated statistics change once per shard, never per iteration"
            )
        self.scss[stat_id].set(value)

    def add_to_stat(self, stat_id: str, increment) -> None:
        self.set_stat(stat_id, self.scss[stat_id].value + increment)

    def scss_nbytes(self) -> int:
        return sum(s.nbytes for s in self.scss.values())

    # -- point estimates ---------------------------------------------------
    def estimate(self, name: str):
        return self.estimates[name]


@dataclass
class Group:
    """Hook bundle for one parameter group of the partition.

    ``update_stats`` runs in the unlocked phase; ``sample`` must only read.
    ``estimate`` defaults to sample means of the group's draws; models with
    closed-form conditional means override it.  Groups with no sampled
    parameters (frozen-estimate bookkeeping groups) leave ``sample`` None.
    """

    name: str
    params: tuple[str, ...] = ()
    update_stats: Callable[[SamplerState, Any], None] | None = None
    sample: Callable[[SamplerState, Any, int, RngStream], dict[str, np.ndarray]] | None = None
    estimate: Callable[[SamplerState, dict[str, np.ndarray]], dict[str, Any]] | None = None
    conditionally_independent: bool = False


@dataclass
class DrawBatch:
    """S approximate posterior draws per reported parameter at one time."""

    t: int
    draws: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        if not self.draws:
            return 0
        return next(iter(self.draws.values())).shape[0]

    def mean(self, param: str):
        return self.draws[param].mean(axis=0)

    def quantiles(self, param: str, qs=(2.5, 50.0, 97.5)) -> np.ndarray:
        return np.percentile(self.draws[param], qs, axis=0)


def step_shard(state: SamplerState, shard, model, n_draws: int):
    """Advance one shard: per group, update statistics once, draw, re-estimate.

    Returns ``(state, DrawBatch)``; the state is mutated in place.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    validate = getattr(model, "validate_shard", None)
    if validate is not None:
        validate(state, shard)
    state.t += 1
    batch = DrawBatch(t=state.t)
    state.last_trace = []
    for group in model.groups:
        state._stats_locked = False
        if group.update_stats is not None:
            group.update_stats(state, shard)
        state._stats_locked = True
        if group.sample is not None:
            draws = group.sample(state, shard, n_draws, state.rng)
            for name, arr in draws.items():
                if arr.shape[0] != n_draws:
                    raise ValueError(
                        f"group '{group.name}' returned {arr.shape[0]} draws "
                        f"for '{name}', expected {n_draws}"
                    )
            if group.estimate is not None:
                estimates = group.estimate(state, draws)
            else:
                estimates = {name: arr.mean(axis=0) for name, arr in draws.items()}
            state.estimates.update(estimates)
            batch.draws.update(draws)
        state.last_trace.append(group.name)
    state._stats_locked = False
    return state, batch


def run_stream(shards: Iterable, model, state: SamplerState, n_draws: int):
    """Fold :func:`step_shard` over a shard stream, one DrawBatch per shard."""
    batches = []
    index = 0
    for shard in shards:
        index += 1
        try:
            _, batch = step_shard(state, shard, model, n_draws)
        except Exception as exc:
            raise StreamError(index, exc) from exc
        batches.append(batch)
    if index == 0:
        raise StreamError(0, ValueError("empty shard stream"))
    return batches


def metropolis_step(current, target_logdensity, step_size: float, rng: RngStream):
    """One symmetric Gaussian random-walk Metropolis move.

    Returns ``(value, accepted)``.  A zero step size proposes the current
    point, which is always accepted.  Proposals with zero target density are
    never accepted; a zero-density *current* point is an invalid state.
    """
    current_arr = np.asarray(current, dtype=float)
    lp_current = float(target_logdensity(current))
    if not math.isfinite(lp_current):
        raise InvalidStateError(
            f"target log-density is {lp_current} at the current point"
        )
    proposal = current_arr + step_size * rng.standard_normal(current_arr.shape)
    if current_arr.ndim == 0:
        proposal = float(proposal)
    lp_prop = float(target_logdensity(proposal))
    if lp_prop == -math.inf:
        return current, False
    if math.log(1.0 - rng.uniform()) <= lp_prop - lp_current:
        return proposal, True
    return current, False


# ---------------------------------------------------------------------------
# Snapshots: versioned, JSON-serializable, bit-exact round trip.
# ---------------------------------------------------------------------------


def _encode_value(v):
    if isinstance(v, np.ndarray):
        return {"__nd__": True, "dtype": str(v.dtype), "shape": list(v.shape),
                "data": v.ravel().tolist()}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {"__dict__": {k: _encode_value(x) for k, x in v.items()}}
    if isinstance(v, (list, tuple)):
        return {"__list__": [_encode_value(x) for x in v]}
    return v


def _decode_value(v):
    if isinstance(v, dict):
        if v.get("__nd__"):
            return np.array(v["data"], dtype=v["dtype"]).reshape(v["shape"])
        if "__dict__" in v:
            return {k: _decode_value(x) for k, x in v["__dict__"].items()}
        if "__list__" in v:
            return [_decode_value(x) for x in v["__list__"]]
    return v


def state_to_snapshot(state: SamplerState) -> dict:
    """Serialize a SamplerState so a stream can stop and resume bit-exactly."""
    return {
        "version": SNAPSHOT_VERSION,
        "t": state.t,
        "rng": state.rng.state_dict(),
        "scss": {
            sid: {"value": _encode_value(s.value), "update_count": s.update_count}
            for sid, s in state.scss.items()
        },
        "estimates": {k: _encode_value(v) for k, v in state.estimates.items()},
        "slots": {k: _encode_value(v) for k, v in state.slots.items()},
    }


def state_from_snapshot(snapshot: dict) -> SamplerState:
    if snapshot.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {snapshot.get('version')}")
    state = SamplerState(RngStream.from_state_dict(snapshot["rng"]))
    state.t = int(snapshot["t"])
    for sid, entry in snapshot["scss"].items():
        stat = state.register_stat(sid, _decode_value(entry["value"]))
        stat.update_count = int(entry["update_count"])
    state.estimates = {k: _decode_value(v) for k, v in snapshot["estimates"].items()}
    state.slots = {k: _decode_value(v) for k, v in snapshot["slots"].items()}
    return state
