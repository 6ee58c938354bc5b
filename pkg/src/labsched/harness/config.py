"""Experiment configuration loaded from TOML files."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import tomli

from ..errors import ConfigError

DATA_ROOT_ENV = "LABSCHED_DATA_ROOT"

DEFAULT_LRS = (1e-4, 3e-4, 1e-3)
DEFAULT_LAMBDAS = (0.0, 0.01, 0.1, 1.0)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_BOX_EDGES = (0.0, 10.0, 100.0)


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


def resolve(path, base: Optional[Path] = None) -> Path:
    """Relative paths resolve against ``base`` (default: the data root)."""
    p = Path(os.path.expanduser(str(path)))
    if p.is_absolute():
        return p
    return (base if base is not None else data_root()) / p


@dataclass
class ExperimentConfig:
    data: Path
    traj_model: Path
    out: Path
    algos: Tuple[str, ...] = ("bc", "ddqn", "cql", "iql")
    lrs: Tuple[float, ...] = DEFAULT_LRS
    lambdas: Tuple[float, ...] = DEFAULT_LAMBDAS
    seeds: Tuple[int, ...] = DEFAULT_SEEDS
    gamma: float = 0.99
    steps: int = 2000
    batch_size: int = 256
    target_sync: int = 1000
    cql_alpha: float = 1.0
    iql_tau: float = 0.7
    hidden: int = 256
    phi: Optional[Path] = None
    buffer_stays: int = 3000
    phi_stays: int = 5000
    eval_stays: int = 0  # 0 means the whole test split
    experience_seed: int = 0
    workers: int = 1
    box_edges: Tuple[float, ...] = DEFAULT_BOX_EDGES
    orderable: Optional[Tuple[int, ...]] = None
    sign_flip_time_passing: bool = False

    def __post_init__(self):
        for name in ("algos", "lrs", "lambdas", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"grid {name!r} must be nonempty")
        from ..agents import ALGOS
        bad = [a for a in self.algos if a not in ALGOS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}; choose from {list(ALGOS)}")
        if any(l < 0 for l in self.lambdas):
            raise ConfigError("cost coefficients must be nonnegative")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def check_paths(self) -> None:
        missing = [str(p) for p in (self.data, self.traj_model) if not Path(p).exists()]
        if missing:
            raise ConfigError(f"configured paths do not exist: {', '.join(missing)}")

    @classmethod
    def from_dict(cls, d: Dict, base: Optional[Path] = None) -> "ExperimentConfig":
        d = dict(d)
        for section in ("grid", "paths", "train", "eval"):
            d.update(d.pop(section, {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        for key in ("data", "traj_model", "out"):
            if key not in d:
                raise ConfigError(f"configuration is missing required path {key!r}")
        for key in ("data", "traj_model", "out", "phi"):
            if d.get(key) is not None:
                d[key] = resolve(d[key], base)
        for key in ("algos", "lrs", "lambdas", "seeds", "box_edges", "orderable"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                d = tomli.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"configuration file not found: {path}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base = Path(os.environ[DATA_ROOT_ENV]) if DATA_ROOT_ENV in os.environ else path.parent
        return cls.from_dict(d, base)

    def cells(self) -> List[Tuple[str, float, float, int]]:
        return [(a, lr, lam, s) for a in self.algos for lr in self.lrs for lam in self.lambdas
                for s in self.seeds]
