"""Streaming Bayesian inference via conditional density filtering.

Samplers update propagated surrogate statistics once per incoming data
shard and draw from the resulting approximate conditionals; exact
sequential Gibbs samplers over full sufficient statistics serve as in-repo
baselines.  A small CLI reproduces the benchmark tables and plots.
"""

from .engine import (
    DrawBatch,
    Group,
    Partition,
    SamplerState,
    SurrogateStat,
    metropolis_step,
    run_stream,
    state_from_snapshot,
    state_to_snapshot,
    step_shard,
)
from .numerics import (
    RngStream,
    chol_solve,
    sample_invgamma,
    sample_mvn,
    sample_truncnormal,
)

__version__ = "0.1.0"

__all__ = [
    "DrawBatch",
    "Group",
    "Partition",
    "RngStream",
    "SamplerState",
    "SurrogateStat",
    "chol_solve",
    "metropolis_step",
    "run_stream",
    "sample_invgamma",
    "sample_mvn",
    "sample_truncnormal",
    "state_from_snapshot",
    "state_to_snapshot",
    "step_shard",
    "__version__",
]
