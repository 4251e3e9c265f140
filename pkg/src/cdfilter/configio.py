"""Experiment configuration: INI-style files with strict key validation."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

MODELS = ("linreg", "anova", "dlm", "probit", "compressed")
ALGORITHMS = ("cdf", "smcmc", "both")

_RUN_KEYS = {
    "model": str,
    "algorithm": str,
    "draws": int,
    "replications": int,
    "seed": int,
    "out": str,
    "threads": int,
    "checkpoints": str,
    "store_draws": bool,
    "ess_threshold": float,
}

_DESIGN_KEYS = {
    "linreg": {"T": int, "n": int, "beta0": str, "sigma0": float},
    "anova": {"T": int, "n": int, "k": int, "zeta_loc": float,
              "zeta_scale": float, "sigma0": float},
    "dlm": {"T": int, "phi0": float, "tau0": float, "sigma0": float},
    "probit": {"T": int, "n": int, "p": int, "x_scale": float,
               "tail_high": float, "n_tail": int, "n_test": int},
    "compressed": {"T": int, "n": int, "p": int, "rho": float,
                   "noise_var": float, "n_nonzero": int, "signal": str,
                   "n_test": int},
}

_SAMPLER_KEYS = {
    "linreg": {"a": float, "b": float, "sigma2_init": float},
    "anova": {"tau_a": float, "tau_b": float, "sig_a": float, "sig_b": float,
              "c1_mode": str},
    "dlm": {"window": int, "mh_draws": int, "phi_step": float,
            "a0": float, "b0": float, "c0": float, "d0": float, "h0": float},
    "probit": {"budget": int, "prior_variance": float},
    "compressed": {"m": int, "prior_variance": float, "prior_a": float,
                   "prior_b": float, "kappa_c": float, "kappa_d": float,
                   "phi_coupling": str},
}


@dataclass
class ExperimentConfig:
    model: str
    algorithm: str = "cdf"
    draws: int = 500
    replications: int = 1
    seed: int = 0
    out: str = "runs/out"
    threads: int = 1
    checkpoints: tuple = ()
    store_draws: bool = False
    ess_threshold: float | None = None
    design: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}"
            )
        if self.draws < 1:
            raise ConfigError("draws must be >= 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        allowed = _DESIGN_KEYS[self.model]
        for key in self.design:
            if key not in allowed:
                raise ConfigError(
                    f"unknown [design] key {key!r} for model {self.model}"
                )
        allowed = _SAMPLER_KEYS[self.model]
        for key in self.sampler:
            if key not in allowed:
                raise ConfigError(
                    f"unknown [sampler] key {key!r} for model {self.model}"
                )
        return self

    def canonical(self) -> str:
        payload = {
            "model": self.model,
            "algorithm": self.algorithm,
            "draws": self.draws,
            "replications": self.replications,
            "seed": self.seed,
            "threads": self.threads,
            "checkpoints": list(self.checkpoints),
            "store_draws": self.store_draws,
            "ess_threshold": self.ess_threshold,
            "design": dict(sorted(self.design.items())),
            "sampler": dict(sorted(self.sampler.items())),
        }
        return json.dumps(payload, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _coerce(raw: str, typ, key: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {typ.__name__}") from exc


def _parse_section(parser, section, allowed):
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ConfigError(f"unknown [{section}] key {key!r}")
        out[key] = _coerce(raw, allowed[key], f"[{section}] {key}")
    return out


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a key = value config file and apply CLI overrides."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive (T vs t)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in ("run", "design", "sampler"):
            raise ConfigError(f"unknown section [{section}]")
    run = _parse_section(parser, "run", _RUN_KEYS)
    if "model" not in run:
        raise ConfigError("[run] model is required")
    model = run.pop("model")
    checkpoints = ()
    if "checkpoints" in run:
        try:
            checkpoints = tuple(int(v) for v in run.pop("checkpoints").split(","))
        except ValueError as exc:
            raise ConfigError("checkpoints must be comma-separated integers") from exc
    cfg = ExperimentConfig(
        model=model,
        checkpoints=checkpoints,
        design=_parse_section(parser, "design", _DESIGN_KEYS[model])
        if model in _DESIGN_KEYS else {},
        sampler=_parse_section(parser, "sampler", _SAMPLER_KEYS[model])
        if model in _SAMPLER_KEYS else {},
        **run,
    )
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def parse_beta0(raw: str) -> tuple:
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse beta0 = {raw!r}") from exc


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
