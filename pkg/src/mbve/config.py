"""Training configuration.

A config file is a JSON object whose top-level keys are :class:`TrainConfig`
fields. The nested ``sac`` and ``model`` objects take :class:`SacConfig` and
:class:`ModelConfig` fields; ``env_overrides`` takes physical constants
accepted by :func:`mbve.envs.make_env`. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dynamics import ModelConfig
from .envs import ENV_IDS
from .errors import ConfigurationError
from .expansion import BOOTSTRAP_MODES
from .sac import SacConfig

ALGORITHMS = ("sac", "mve", "ove")
OUTPUT_ROOT_ENV = "MBVE_OUTPUT_ROOT"
DTYPES = ("float32", "float64")


@dataclass
class TrainConfig:
    env: str = "pendulum"
    algo: str = "sac"
    horizon: int = 0
    seeds: list = field(default_factory=lambda: [0])
    total_steps: int = 30_000
    warmup_steps: int = 1000
    utd_ratio: int = 1
    eval_interval: int = 1000
    eval_episodes: int = 10
    buffer_capacity: int = 200_000
    bootstrap: str = "twin_min_target"
    max_horizon: int = 30
    stop_reward: float | None = None
    dtype: str = "float32"
    out_dir: str | None = None
    env_overrides: dict = field(default_factory=dict)
    sac: SacConfig = field(default_factory=SacConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.sac, dict):
            self.sac = _build(SacConfig, self.sac, "sac")
        if isinstance(self.model, dict):
            self.model = _build(ModelConfig, self.model, "model")
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        if self.env not in ENV_IDS:
            raise ConfigurationError(f"env must be one of {ENV_IDS}")
        if self.algo not in ALGORITHMS:
            raise ConfigurationError(f"algo must be one of {ALGORITHMS}")
        if self.algo == "sac" and self.horizon != 0:
            raise ConfigurationError("sac is value expansion with horizon 0; use mve/ove for horizon > 0")
        if not 0 <= self.horizon <= self.max_horizon:
            raise ConfigurationError(f"horizon must lie in [0, {self.max_horizon}]")
        if self.total_steps < self.warmup_steps:
            raise ConfigurationError("total_steps must be >= warmup_steps")
        if self.warmup_steps < 1 or self.utd_ratio < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigurationError("warmup_steps, utd_ratio, eval_interval and eval_episodes must be >= 1")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.bootstrap not in BOOTSTRAP_MODES:
            raise ConfigurationError(f"bootstrap must be one of {BOOTSTRAP_MODES}")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {DTYPES}")

    @property
    def uses_model(self) -> bool:
        return self.algo == "mve" and self.horizon > 0

    @property
    def label(self) -> str:
        return f"{self.env}_{self.algo}_H{self.horizon}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sac"]["hidden"] = list(self.sac.hidden)
        d["model"]["hidden"] = list(self.model.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _build(cls, d, "config")

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        for key, value in changes.items():
            if key in ("sac", "model") and isinstance(value, dict):
                d[key].update(value)
            else:
                d[key] = value
        return TrainConfig.from_dict(d)

    def resolved_out_dir(self) -> Path | None:
        if self.out_dir is None:
            root = os.environ.get(OUTPUT_ROOT_ENV)
            return Path(root) / self.label if root else None
        p = Path(self.out_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return Path(root) / p if root and not p.is_absolute() else p


def _build(cls, d: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {sorted(unknown)}")
    return cls(**d)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return TrainConfig.from_dict(json.load(fh))


def parse_seeds(text: str) -> list:
    """``"0..4"`` -> [0, 1, 2, 3, 4]; ``"0,2,5"`` -> [0, 2, 5]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out
