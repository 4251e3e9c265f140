"""Simulated data generators for the benchmark designs, plus CSV ingestion.

Every generator is a pure function of (design, seed): the same design and
seed always reproduce the identical shard stream.  Real tabular data comes
in through :func:`ingest_csv`, which standardizes continuous columns with
running moments (no full-data pass) and one-hot encodes categoricals with
the first level dropped.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, ShardShapeError
from .numerics import RngStream

__all__ = [
    "Shard",
    "LinRegDesign",
    "AnovaDesign",
    "DlmDesign",
    "ProbitDesign",
    "CompressedDesign",
    "CsvSchema",
    "gen_linreg",
    "gen_anova",
    "gen_dlm",
    "gen_probit",
    "gen_compressed",
    "ingest_csv",
]


@dataclass
class Shard:
    """One incoming data block; ``X`` is None for the scalar-series model."""

    t: int
    X: np.ndarray | None
    y: np.ndarray | float


@dataclass
class LinRegDesign:
    n: int = 10
    T: int = 500
    beta0: tuple = (1.0, 0.5, 0.25, -1.0, 0.75)
    sigma0: float = 5.0


@dataclass
class AnovaDesign:
    k: int = 10
    n: int = 10
    T: int = 500
    zeta_loc: float = 4.0
    zeta_scale: float = 0.1
    sigma0: float = 10.0


@dataclass
class DlmDesign:
    T: int = 3000
    phi0: float = 0.8
    tau0: float = math.sqrt(2.0)
    sigma0: float = 0.1


@dataclass
class ProbitDesign:
    p: int = 100
    n: int = 25
    T: int = 100
    x_scale: float = 0.25
    lead_coef: tuple = (3.5, -3.5, -2.0, 2.0, -1.5, 1.5, -1.5, 1.5, -1.0, 1.0)
    tail_high: float = 0.75      # remaining coefficients ~ U(-tail_high, tail_high)
    n_tail: int | None = None    # how many tail coefficients are nonzero


@dataclass
class CompressedDesign:
    p: int = 500
    n: int = 100
    T: int = 500
    rho: float = 0.1
    noise_var: float = 4.0
    n_nonzero: int = 10
    signal: str = "high"         # "high": U(-3,3); "low": all 0.10
    n_test: int = 1000


def gen_linreg(design: LinRegDesign, seed: int):
    """U(0,1) predictors, Gaussian noise; yields (truth, shard iterator)."""
    rng = RngStream(seed)
    beta0 = np.asarray(design.beta0, dtype=float)

    def shards():
        for t in range(1, design.T + 1):
            X = rng.uniform(size=(design.n, beta0.shape[0]))
            y = X @ beta0 + design.sigma0 * rng.standard_normal(design.n)
            yield Shard(t, X, y)

    return {"beta": beta0, "sigma2": design.sigma0**2}, shards()


def gen_anova(design: AnovaDesign, seed: int):
    rng = RngStream(seed)
    zeta0 = design.zeta_loc + design.zeta_scale * rng.standard_normal(design.k)

    def shards():
        for t in range(1, design.T + 1):
            y = zeta0[:, None] + design.sigma0 * rng.standard_normal(
                (design.k, design.n)
            )
            yield Shard(t, None, y)

    return {"zeta": zeta0}, shards()


def gen_dlm(design: DlmDesign, seed: int):
    """AR(1) latent path started from its stationary law."""
    rng = RngStream(seed)
    h0 = design.tau0**2 / (1.0 - design.phi0**2) if design.tau0 > 0 else 1.0
    theta = math.sqrt(h0) * float(rng.standard_normal())
    path = np.empty(design.T)
    ys = np.empty(design.T)
    for t in range(design.T):
        theta = design.phi0 * theta + design.tau0 * float(rng.standard_normal())
        path[t] = theta
        ys[t] = theta + design.sigma0 * float(rng.standard_normal())

    def shards():
        for t in range(1, design.T + 1):
            yield Shard(t, None, float(ys[t - 1]))

    return {"theta": path, "phi": design.phi0,
            "tau2": design.tau0**2, "sigma2": design.sigma0**2}, shards()


def gen_probit(design: ProbitDesign, seed: int):
    rng = RngStream(seed)
    beta0 = np.zeros(design.p)
    lead = np.asarray(design.lead_coef, dtype=float)
    beta0[: lead.shape[0]] = lead
    n_tail = design.n_tail
    if n_tail is None:
        n_tail = design.p - lead.shape[0]
    if n_tail > 0:
        stop = lead.shape[0] + n_tail
        beta0[lead.shape[0]: stop] = rng.uniform(
            -design.tail_high, design.tail_high, size=n_tail
        )

    def shards():
        for t in range(1, design.T + 1):
            X = design.x_scale * rng.standard_normal((design.n, design.p))
            y = np.where(rng.uniform(size=design.n) < ndtr(X @ beta0), 1.0, -1.0)
            yield Shard(t, X, y)

    return {"beta": beta0}, shards()


def _ar1_predictors(rng: RngStream, nrows: int, p: int, rho: float) -> np.ndarray:
    """N(0, R) rows with R_jk = rho^|j-k| via the banded construction."""
    z = rng.standard_normal((nrows, p))
    if rho == 0.0:
        return z
    X = np.empty_like(z)
    X[:, 0] = z[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + c * z[:, j]
    return X


def gen_compressed(design: CompressedDesign, seed: int):
    """Correlated Gaussian predictors plus a fixed held-out test set."""
    if not 0.0 <= design.rho < 1.0:
        raise ConfigError("rho must be in [0, 1)")
    rng = RngStream(seed)
    beta0 = np.zeros(design.p)
    if design.signal == "high":
        beta0[: design.n_nonzero] = rng.uniform(-3.0, 3.0, size=design.n_nonzero)
    elif design.signal == "low":
        beta0[: design.n_nonzero] = 0.10
    else:
        raise ConfigError(f"unknown signal level {design.signal!r}")
    sd = math.sqrt(design.noise_var)
    X_test = _ar1_predictors(rng, design.n_test, design.p, design.rho)
    y_test = X_test @ beta0 + sd * rng.standard_normal(design.n_test)

    def shards():
        for t in range(1, design.T + 1):
            X = _ar1_predictors(rng, design.n, design.p, design.rho)
            y = X @ beta0 + sd * rng.standard_normal(design.n)
            yield Shard(t, X, y)

    return {"gamma": beta0, "test": (X_test, y_test)}, shards()


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Column roles for tabular ingestion.

    ``categoricals`` may map a column name to an explicit level list; levels
    left as None are frozen from the rows of the first shard.  The binary
    response maps ``positive_label`` to +1 and everything else to -1.
    """

    response: str
    positive_label: str
    categoricals: dict[str, list[str] | None] = field(default_factory=dict)
    drop: tuple = ()
    shard_size: int = 300
    standardize: bool = True


class _RunningMoments:
    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, rows: np.ndarray) -> None:
        for row in rows:
            self.count += 1
            delta = row - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (row - self.mean)

    def sd(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.sqrt(self.m2 / (self.count - 1))


def _parse_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: missing header row")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def ingest_csv(path, schema: CsvSchema):
    """Stream fixed-size shards from a CSV file.

    Returns ``(column_names, shard_iterator)``.  Rows with missing fields
    are dropped; continuous columns are standardized with running
    mean/sd (constant-in-first-shard columns are dropped with a warning);
    an unseen categorical level after the schema freeze is an error.
    """
    rows_iter = _parse_rows(path)
    first_block: list[dict] = []
    first_linenos: list[int] = []
    for lineno, row in rows_iter:
        if any(v is None or v == "" for v in row.values()):
            continue
        first_block.append(row)
        first_linenos.append(lineno)
        if len(first_block) >= schema.shard_size:
            break
    if not first_block:
        raise ConfigError(f"{path}: no complete rows")

    header = list(first_block[0].keys())
    if schema.response not in header:
        raise ConfigError(f"response column {schema.response!r} not in header")
    cont_cols = [c for c in header
                 if c != schema.response
                 and c not in schema.categoricals and c not in schema.drop]
    levels: dict[str, list[str]] = {}
    for col, lv in schema.categoricals.items():
        if col not in header:
            raise ConfigError(f"categorical column {col!r} not in header")
        if lv is None:
            lv = sorted({row[col] for row in first_block})
        levels[col] = list(lv)

    def parse_block(block, linenos):
        cont = np.empty((len(block), len(cont_cols)))
        for i, (row, ln) in enumerate(zip(block, linenos)):
            for j, col in enumerate(cont_cols):
                try:
                    cont[i, j] = float(row[col])
                except ValueError as exc:
                    raise ShardShapeError(
                        f"{path}:{ln}: malformed value {row[col]!r} in column {col!r}"
                    ) from exc
        dummies = []
        for col in sorted(levels):
            lv = levels[col]
            block_levels = [row[col] for row in block]
            unknown = set(block_levels) - set(lv)
            if unknown:
                raise ShardShapeError(
                    f"{path}: unseen level(s) {sorted(unknown)} in column {col!r} "
                    "after schema freeze"
                )
            # first level dropped
            idx = {v: i for i, v in enumerate(lv)}
            block_idx = np.array([idx[v] for v in block_levels])
            d = np.zeros((len(block), len(lv) - 1))
            hot = block_idx > 0
            d[np.arange(len(block))[hot], block_idx[hot] - 1] = 1.0
            dummies.append(d)
        yv = np.array([1.0 if row[schema.response] == schema.positive_label else -1.0
                       for row in block])
        return cont, dummies, yv

    cont0, dummies0, _ = parse_block(first_block, first_linenos)
    keep = np.ones(len(cont_cols), dtype=bool)
    if schema.standardize:
        keep = cont0.std(axis=0) > 0.0
        for j, flag in enumerate(keep):
            if not flag:
                warnings.warn(
                    f"column {cont_cols[j]!r} is constant in the first shard; dropped",
                    stacklevel=2,
                )
    kept_cols = [c for c, f in zip(cont_cols, keep) if f]
    names = kept_cols + [
        f"{col}={lv}" for col in sorted(levels) for lv in levels[col][1:]
    ]
    moments = _RunningMoments(len(kept_cols))

    def shards():
        t = 0
        block, linenos = first_block, first_linenos
        while block:
            t += 1
            cont, dummies, yv = parse_block(block, linenos)
            cont = cont[:, keep]
            if schema.standardize and cont.shape[1]:
                moments.update(cont)
                sd = moments.sd()
                sd[sd == 0.0] = 1.0
                cont = (cont - moments.mean) / sd
            X = np.hstack([cont] + dummies) if dummies else cont
            yield Shard(t, X, yv)
            block, linenos = [], []
            for lineno, row in rows_iter:
                if any(v is None or v == "" for v in row.values()):
                    continue
                block.append(row)
                linenos.append(lineno)
                if len(block) >= schema.shard_size:
                    break

    return names, shards()
