"""Experiment configuration files.

A configuration is a TOML document::

    experiment = "sup-stats"
    seed = 7
    trials = 100000

    [field]
    kind = "block"
    K = 2
    N = 4

    [params]
    z_multiples = [0.5, 1.0, 1.5, 2.0]

Command-line flags override ``seed``, ``trials``, ``out`` and ``workers``.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..fields import (
    FieldError,
    GaussianField,
    build_block,
    build_directed_polymer,
    build_explicit,
    build_shifted,
    build_sk,
    load_covariance_csv,
)

EXPERIMENTS = {
    "sup-stats": "sim",
    "lemma23": "sim",
    "peaks": "peaks",
    "cor25": "peaks",
    "lemma22": "peaks",
    "fe-curve": "fe",
    "fe-contribution": "fe",
    "peaks-fe": "fe",
    "martingale": "martingale",
    "tail": "tail",
    "surface": "surface",
}

DEFAULT_EXPERIMENT = {
    "sim": "sup-stats",
    "peaks": "peaks",
    "fe": "fe-curve",
    "martingale": "martingale",
    "tail": "tail",
    "surface": "surface",
}

FIELD_KINDS = ("explicit", "directed-polymer", "sk", "block", "shifted", "independent", "orthonormal")
_U64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    field: dict
    params: dict = dc_field(default_factory=dict)
    trials: int = 10_000
    seed: int = 0
    out: str = "results"
    workers: int = 1
    name: str = ""
    base_dir: str = "."

    def label(self) -> str:
        return self.name or self.experiment

    def echo(self) -> dict:
        """The configuration as written to result records (no filesystem context)."""
        return {
            "experiment": self.experiment,
            "name": self.label(),
            "field": dict(self.field),
            "params": dict(self.params),
            "trials": self.trials,
            "seed": self.seed,
        }

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        validate(cfg)
        return cfg

    def build_field(self) -> GaussianField:
        return build_field(self.field, self.base_dir)


def _int(value, key: str, lo: int = 0, hi: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    value = int(value)
    if value < lo or (hi is not None and value > hi):
        raise ConfigError(key, f"value {value} outside [{lo}, {hi if hi is not None else 'inf'}]")
    return value


def _float(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    return value


def _normalization(desc: dict) -> str:
    value = desc.get("normalization", desc.get("sk-normalization", "raw"))
    aliases = {"raw": "raw", "paper-raw": "raw", "unit": "unit", "unit-variance": "unit"}
    if value not in aliases:
        raise ConfigError("field.normalization", f"expected raw or unit, got {value!r}")
    return aliases[value]


def build_field(desc: dict, base_dir: str | Path = ".") -> GaussianField:
    """Field from a ``[field]`` table. Errors name the offending key."""
    if not isinstance(desc, dict):
        raise ConfigError("field", "missing [field] table")
    kind = desc.get("kind")
    if kind not in FIELD_KINDS:
        raise ConfigError("field.kind", f"expected one of {', '.join(FIELD_KINDS)}, got {kind!r}")
    norm = _normalization(desc)
    try:
        if kind == "directed-polymer":
            return build_directed_polymer(_int(desc.get("n"), "field.n", 1), norm)
        if kind == "sk":
            limit = _int(desc.get("limit", 24), "field.limit", 1)
            return build_sk(_int(desc.get("n"), "field.n", 1), norm, limit)
        if kind == "block":
            return build_block(_int(desc.get("K"), "field.K", 1), _int(desc.get("N"), "field.N", 1))
        if kind == "independent":
            n = _int(desc.get("N"), "field.N", 1)
            return build_block(n, n)
        if kind == "shifted":
            return build_shifted(_int(desc.get("N"), "field.N", 1), _float(desc.get("alpha"), "field.alpha"))
        if kind == "orthonormal":
            return build_explicit(factor=np.eye(_int(desc.get("N"), "field.N", 1)))
        # explicit
        sources = [k for k in ("factor", "covariance", "covariance_csv") if k in desc]
        if len(sources) != 1:
            raise ConfigError("field", "explicit fields need exactly one of factor, covariance, covariance_csv")
        means = desc.get("means")
        if sources[0] == "factor":
            return build_explicit(factor=np.asarray(desc["factor"], dtype=float), means=means, normalization=norm)
        if sources[0] == "covariance":
            cov = np.asarray(desc["covariance"], dtype=float)
        else:
            path = Path(desc["covariance_csv"])
            if not path.is_absolute():
                path = Path(base_dir) / path
            if not path.exists():
                raise ConfigError("field.covariance_csv", f"file not found: {path}")
            cov = load_covariance_csv(path)
        return build_explicit(covariance=cov, means=means, normalization=norm)
    except ConfigError:
        raise
    except (FieldError, ValueError) as exc:
        raise ConfigError(f"field ({kind})", str(exc)) from exc


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    _int(cfg.seed, "seed", 0, _U64)
    _int(cfg.trials, "trials", 2)
    _int(cfg.workers, "workers", 1)
    if not isinstance(cfg.params, dict):
        raise ConfigError("params", "must be a table")
    for key, value in cfg.params.items():
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"params.{key}", "must be finite")
    return cfg


def config_from_dict(doc: dict, base_dir: str | Path = ".", experiment: str | None = None) -> ExperimentConfig:
    """Configuration from a parsed document; ``experiment`` fills in a missing kind."""
    known = {"experiment", "name", "seed", "trials", "out", "workers", "field", "params"}
    extra = sorted(set(doc) - known)
    if extra:
        raise ConfigError(extra[0], "unknown top-level key")
    kind = doc.get("experiment", experiment)
    if kind is None:
        raise ConfigError("experiment", "missing")
    cfg = ExperimentConfig(
        experiment=kind,
        field=dict(doc.get("field", {})),
        params=dict(doc.get("params", {})),
        trials=doc.get("trials", 10_000),
        seed=doc.get("seed", 0),
        out=str(doc.get("out", "results")),
        workers=doc.get("workers", 1),
        name=str(doc.get("name", "")),
        base_dir=str(base_dir),
    )
    validate(cfg)
    build_field(cfg.field, base_dir)
    return cfg


def load_config(path: str | Path, experiment: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("--config", f"file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent, experiment)
