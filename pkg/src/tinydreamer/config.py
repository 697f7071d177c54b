"""Run configuration: one flat record of every hyperparameter.

Loaded from a single JSON file; unknown keys are rejected and every field is
validated. Field defaults follow the reference hyperparameter table, with
desk-scale overrides for sequence length, prefill, and train ratio.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run
    env: str = "grid-reach/standard"
    objective: str = "bt"  # bt | recon | none
    seed: int = 0
    total_steps: int = 100_000
    prefill: int = 1_000
    train_ratio: float = 0.5  # gradient steps per env step
    eval_interval: int = 5_000
    eval_episodes: int = 10
    checkpoint_interval: int = 20_000
    log_interval: int = 500

    # replay
    replay_capacity: int = 5_000_000
    batch_size: int = 16
    batch_length: int = 32

    # model sizes
    deter: int = 128
    groups: int = 8
    classes: int = 8
    embed: int = 128
    hidden: int = 128
    layers: int = 2
    unimix: float = 0.01
    reward_bins: int = 41
    reward_limit: float = 20.0

    # world-model loss
    beta_bt: float = 0.05
    alpha: float = 5e-4
    beta_dyn: float = 1.0
    beta_rep: float = 0.1
    free_nats: float = 1.0

    # actor-critic
    horizon: int = 15
    discount_horizon: float = 333.0
    return_lambda: float = 0.95
    beta_val: float = 1.0
    beta_repval: float = 0.3
    critic_ema_decay: float = 0.98
    critic_ema_reg: float = 1.0
    eta: float = 3e-4
    retnorm_decay: float = 0.99
    retnorm_limit: float = 1.0

    # optimizer
    lr: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    laprop_eps: float = 1e-20
    agc_clip: float = 0.3

    @property
    def gamma(self) -> float:
        return 1.0 - 1.0 / self.discount_horizon

    def validate(self) -> "RunConfig":
        if self.objective not in ("bt", "recon", "none"):
            raise ConfigError(f"objective must be bt|recon|none, got {self.objective!r}")
        positive = [
            "total_steps", "train_ratio", "eval_interval", "eval_episodes",
            "checkpoint_interval", "log_interval", "replay_capacity",
            "batch_size", "batch_length", "deter", "groups", "classes",
            "embed", "hidden", "layers", "reward_bins", "reward_limit",
            "horizon", "discount_horizon", "lr",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.return_lambda <= 1.0:
            raise ConfigError(f"return_lambda must be in [0,1], got {self.return_lambda}")
        if self.discount_horizon <= 1.0:
            raise ConfigError("discount_horizon must exceed 1")
        if not 0.0 <= self.unimix < 1.0:
            raise ConfigError(f"unimix must be in [0,1), got {self.unimix}")
        if self.batch_size * self.batch_length < 2:
            raise ConfigError("batch_size * batch_length must be >= 2")
        from .envs import EnvSpec

        EnvSpec.parse(self.env)
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs).validate()
