"""Seeded random variate generation and small dense SPD linear algebra.

Every sampler in the package draws through an :class:`RngStream`, a
counter-based generator (Philox) with explicit sub-stream derivation, so
replicated experiments are bit-reproducible and sub-streams for
(replication, model, algorithm) never collide.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import get_lapack_funcs, solve_triangular
from scipy.special import ndtr, ndtri

from .errors import NotPositiveDefiniteError

__all__ = [
    "RngStream",
    "cholesky_spd",
    "chol_solve",
    "check_spd",
    "sample_mvn",
    "sample_invgamma",
    "sample_truncnormal",
]

# Inverse-CDF sampling of a one-sided truncated normal underflows once the
# truncation point sits this many standard deviations into the tail; beyond
# it we switch to exponential rejection sampling.
_TAIL_SWITCH = 5.0


class RngStream:
    """Counter-based random generator with derivable sub-streams.

    A stream is identified by a 64-bit root seed plus an integer key path.
    Identical (seed, path) pairs yield bit-identical draw sequences; distinct
    paths yield non-overlapping streams (numpy's ``SeedSequence`` spawn-key
    mixing is injective over the path).
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(k) for k in path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def substream(self, *keys: int) -> "RngStream":
        """Derive the disjoint sub-stream identified by appending ``keys``."""
        return RngStream(self.seed, self.path + tuple(int(k) for k in keys))

    # thin passthroughs so call sites read naturally
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def gamma(self, shape, scale=1.0, size=None):
        return self.generator.gamma(shape, scale, size)

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def state_dict(self) -> dict:
        """Serializable snapshot; restoring it resumes the stream bit-exactly."""
        state = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "path": list(self.path),
            "state": _jsonify_bitgen_state(state),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "RngStream":
        stream = cls(int(d["seed"]), tuple(d["path"]))
        stream.generator.bit_generator.state = _unjsonify_bitgen_state(d["state"])
        return stream

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"RngStream(seed={self.seed}, path={self.path})"


def _jsonify_bitgen_state(state):
    if isinstance(state, dict):
        return {k: _jsonify_bitgen_state(v) for k, v in state.items()}
    if isinstance(state, np.ndarray):
        return {"__u64__": [int(v) for v in state.ravel()]}
    if isinstance(state, (np.integer,)):
        return int(state)
    return state


def _unjsonify_bitgen_state(state):
    if isinstance(state, dict):
        if "__u64__" in state:
            return np.array(state["__u64__"], dtype=np.uint64)
        return {k: _unjsonify_bitgen_state(v) for k, v in state.items()}
    return state


def cholesky_spd(a: np.ndarray, context: str = "") -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises :class:`NotPositiveDefiniteError` naming the failing pivot when
    the factorization breaks down, which beats numpy's anonymous LinAlgError
    when debugging a sampler whose propagated precision degenerated.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    (potrf,) = get_lapack_funcs(("potrf",), (a,))
    c, info = potrf(a, lower=True, overwrite_a=False, clean=True)
    if info > 0:
        raise NotPositiveDefiniteError(int(info), context)
    if info < 0:  # pragma: no cover - argument error from LAPACK
        raise ValueError(f"illegal value in argument {-info} of potrf")
    return c


def check_spd(a: np.ndarray, name: str = "matrix", sym_rtol: float = 1e-10) -> np.ndarray:
    """Validate symmetry (relative 1e-10) and positive definiteness of ``a``."""
    a = np.asarray(a, dtype=float)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=sym_rtol * scale):
        raise ValueError(f"{name} is not symmetric to within {sym_rtol} relative")
    cholesky_spd(a, context=name)
    return a


def chol_solve(a: np.ndarray, b: np.ndarray, context: str = "") -> np.ndarray:
    """Solve ``a @ x = b`` for SPD ``a`` via Cholesky."""
    low = cholesky_spd(a, context)
    y = solve_triangular(low, b, lower=True, check_finite=False)
    return solve_triangular(low, y, lower=True, trans="T", check_finite=False)


def sample_mvn(mean, cov, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draws from N(mean, cov) using the lower-Cholesky convention
    draw = mean + L @ z with z iid standard normal.

    With ``size=None`` returns one (d,) draw, otherwise a (size, d) array.
    All draws from one call share the factorization.
    """
    mean = np.asarray(mean, dtype=float)
    low = cholesky_spd(cov, context="covariance")
    d = mean.shape[0]
    if size is None:
        return mean + low @ rng.standard_normal(d)
    z = rng.standard_normal((d, int(size)))
    return mean[None, :] + (low @ z).T


def sample_invgamma(shape, rate, rng: RngStream, size: int | None = None):
    """Inverse-gamma draws with density proportional to x^(-shape-1) e^(-rate/x)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0.0) or np.any(rate <= 0.0):
        raise ValueError(
            f"inverse-gamma requires shape > 0 and rate > 0, got shape={shape}, rate={rate}"
        )
    g = rng.gamma(shape, 1.0, size)
    return rate / g


def _truncated_positive_normal(mean: np.ndarray, rng: RngStream) -> np.ndarray:
    """Vector of draws from N(mean_i, 1) conditioned on being positive."""
    mean = np.asarray(mean, dtype=float)
    out = np.empty_like(mean)

    easy = mean >= -_TAIL_SWITCH
    if np.any(easy):
        m = mean[easy]
        upper = ndtr(m)  # P(draw > 0)
        v = 1.0 - rng.uniform(size=m.shape)  # in (0, 1], keeps ndtri off the 1.0 pole
        out[easy] = m - ndtri(v * upper)

    hard = ~easy
    if np.any(hard):
        # Exponential rejection for the far tail (Robert 1995): sample the
        # standard normal truncated to (a, inf) with a = -mean > 5.
        a = -mean[hard]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        draws = np.empty_like(a)
        todo = np.ones(a.shape, dtype=bool)
        while np.any(todo):
            n_todo = int(todo.sum())
            x = a[todo] + rng.exponential(size=n_todo) / lam[todo]
            accept = rng.uniform(size=n_todo) <= np.exp(-0.5 * (x - lam[todo]) ** 2)
            idx = np.flatnonzero(todo)[accept]
            draws[idx] = x[accept]
            todo[idx] = False
        out[hard] = mean[hard] + draws
    return out


def sample_truncnormal(mean, sign, rng: RngStream):
    """Draws from N(mean, 1) truncated to the half-line selected by ``sign``.

    ``sign=+1`` truncates to (0, inf) and ``sign=-1`` to (-inf, 0); both may
    be scalars or arrays (broadcast together).  Inverse-CDF sampling is used
    while the truncation point is within ``5`` standard deviations of the
    mean, exponential rejection beyond.
    """
    mean = np.asarray(mean, dtype=float)
    sign = np.asarray(sign, dtype=float)
    if not np.all(np.abs(sign) == 1.0):
        raise ValueError("sign must be +1 or -1")
    scalar = mean.ndim == 0 and sign.ndim == 0
    mean, sign = np.broadcast_arrays(np.atleast_1d(mean), np.atleast_1d(sign))
    draws = sign * _truncated_positive_normal(sign * mean, rng)
    return float(draws[0]) if scalar else draws


def truncnormal_mean_offset(mean, sign):
    """E[z] - mean for z ~ N(mean, 1) truncated to the ``sign`` half-line.

    Equals sign * phi(mean) / Phi(sign * mean); evaluated through the
    numerically safe tail of ndtr.
    """
    mean = np.asarray(mean, dtype=float)
    sign = np.asarray(sign, dtype=float)
    phi = np.exp(-0.5 * mean**2) / math.sqrt(2.0 * math.pi)
    return sign * phi / ndtr(sign * mean)
