"""Exception types shared across the samplers and the experiment runner."""


class CdfilterError(Exception):
    """Base class for all library-specific errors."""


class NotPositiveDefiniteError(CdfilterError, ValueError):
    """Cholesky factorization failed.

    ``pivot`` is the 1-based index of the first non-positive leading minor.
    """

    def __init__(self, pivot: int, context: str = ""):
        self.pivot = pivot
        msg = f"matrix is not positive definite (failing pivot {pivot})"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class ShardShapeError(CdfilterError, ValueError):
    """Incoming data block does not match the dimensions fixed by the stream."""


class NumericOverflowError(CdfilterError, FloatingPointError):
    """A propagated statistic became non-finite.  ``stat_id`` names it."""

    def __init__(self, stat_id: str, detail: str = ""):
        self.stat_id = stat_id
        msg = f"statistic '{stat_id}' is non-finite after update"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class NumericDegeneracyError(CdfilterError, ValueError):
    """A conditional's scale parameter collapsed to a non-positive value,
    usually a sign of wildly inconsistent point estimates."""


class InvalidStateError(CdfilterError, RuntimeError):
    """A sampler was asked to move from a state with zero target density."""


class StreamError(CdfilterError, RuntimeError):
    """Error raised while folding a sampler over a shard stream.

    Wraps the underlying error and records the 1-based shard index.
    """

    def __init__(self, shard_index: int, cause: Exception):
        self.shard_index = shard_index
        self.cause = cause
        super().__init__(f"shard {shard_index}: {cause}")


class ConfigError(CdfilterError, ValueError):
    """Invalid experiment configuration."""
