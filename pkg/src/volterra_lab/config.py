"""Experiment configuration: dataclasses with TOML overrides.

A config file holds one flat table per experiment, e.g.::

    [lq]
    phi = "one"
    horizon = 0.5
    n_grid = 128

Unknown experiment names and unknown keys are rejected; every numeric
parameter must be positive.  Configs round-trip unchanged through
``to_dict`` / ``from_dict``.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import DomainError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class EmbedConfig:
    horizons: tuple[float, ...] = (0.5, 1.0, 2.0)
    n_paths: int = 1000
    n_s: int = 512
    n_modes: int = 12
    seed: int = 1


@dataclass(frozen=True)
class RieszConfig:
    horizon: float = 1.0
    n_s_list: tuple[int, ...] = (128, 256, 512, 1024, 2048)
    t_fracs: tuple[float, ...] = (0.25, 0.5, 0.75)
    dense_n_s: int = 1024
    seed: int = 1


@dataclass(frozen=True)
class DiagonalConfig:
    horizon: float = 1.0
    levels: tuple[int, ...] = (16, 32, 64, 128)
    ref_factor: int = 4
    n_paths: int = 10000
    x0: float = 0.3
    coeff_preset: str = "smooth-exp"
    control_preset: str = "zero"
    seed: int = 1


@dataclass(frozen=True)
class MarkovConfig:
    horizon: float = 1.0
    n_t: int = 128
    n_basis: int = 24
    n_list: tuple[int, ...] = (1, 2, 4, 8, 16)
    n_paths: int = 2000
    coeff_preset: str = "markov-exp"
    x0: float = 0.5
    seed: int = 1


@dataclass(frozen=True)
class LQConfig:
    phi: str = "one"
    horizon: float = 0.5
    n_grid: int = 128
    n_paths: int = 20000
    x0: float = 1.0
    gain_points: int = 9
    field_stride: int = 0     # 0 = auto (about 16 slices per axis)
    seed: int = 1


@dataclass(frozen=True)
class StarterConfig:
    horizon: float = 1.0
    n_t: int = 512
    n_s: int = 8
    n_paths: int = 100000
    x0: float = 1.0
    seed: int = 42


@dataclass(frozen=True)
class BSDEConfig:
    preset: str = "drift-linear"
    horizon: float = 1.0
    n_t: int = 64
    n_s: int = 32
    n_paths: int = 20000
    reg_degree: int = 2
    n_summary: int = 4
    seed: int = 7


@dataclass(frozen=True)
class ContractSpanConfig:
    preset: str = "two-factor"
    horizon: float = 1.0
    n_t: int = 256
    n_paths: int = 200
    inject_scale: float = 0.3
    margin: float = 1e-3
    seed: int = 5


@dataclass(frozen=True)
class ContractTargetConfig:
    preset: str = "two-factor"
    horizon: float = 1.0
    levels: tuple[int, ...] = (64, 128, 256)
    n_paths: int = 300
    seed: int = 5


@dataclass(frozen=True)
class GramConfig:
    horizon: float = 1.0
    n_s: int = 1024
    n_probes: int = 20
    seed: int = 1


CONFIG_TYPES = {
    "embed": EmbedConfig,
    "riesz": RieszConfig,
    "diagonal": DiagonalConfig,
    "markov": MarkovConfig,
    "lq": LQConfig,
    "starter": StarterConfig,
    "bsde": BSDEConfig,
    "contract-span": ContractSpanConfig,
    "contract-target": ContractTargetConfig,
    "gram": GramConfig,
}


def experiment_names() -> list[str]:
    return sorted(CONFIG_TYPES)


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def from_dict(experiment: str, data: dict):
    if experiment not in CONFIG_TYPES:
        raise DomainError(f"unknown experiment {experiment!r}; "
                          f"choose from {experiment_names()}")
    cls = CONFIG_TYPES[experiment]
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in names:
            raise DomainError(f"unknown config key {key!r} for {experiment}")
        default = getattr(cls, names[key].name, None)
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    cfg = cls(**kwargs)
    _validate(experiment, cfg)
    return cfg


def _validate(experiment: str, cfg) -> None:
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            if f.name in ("field_stride",):
                if v < 0:
                    raise DomainError(f"{experiment}.{f.name} must be >= 0, got {v}")
            elif v <= 0:
                raise DomainError(f"{experiment}.{f.name} must be positive, got {v}")
        if isinstance(v, tuple):
            for item in v:
                if isinstance(item, (int, float)) and item <= 0:
                    raise DomainError(f"{experiment}.{f.name} entries must be positive")


def load(experiment: str, config_path: str | Path | None = None,
         seed: int | None = None):
    """Config for one experiment, from defaults, optional TOML, optional seed."""
    data = {}
    if config_path is not None:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
        data = doc.get(experiment, {})
        if not isinstance(data, dict):
            raise DomainError(f"config table [{experiment}] must be a table")
    if experiment not in CONFIG_TYPES:
        raise DomainError(f"unknown experiment {experiment!r}; "
                          f"choose from {experiment_names()}")
    if seed is not None:
        data = dict(data)
        data["seed"] = seed
    return from_dict(experiment, data)
