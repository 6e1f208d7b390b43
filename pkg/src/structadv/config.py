"""Training configuration and its flat ``key = value`` text format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .networks import Architecture
from .objectives import ObjectiveConfig

DISTANCE_CHOICES = ("jsd", "bhattacharyya", "hinge")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # objective
    distance: str = "jsd"  # jsd | bhattacharyya | hinge (hinge GAN baseline)
    lambda_c: float = 3.0
    lambda_s: float = 5.0
    lambda_h: float = 4.0
    lip_target: float = 1.0
    power_steps: int = 1
    one_sided_penalty: bool = False
    fake_norm: str = "nk"
    # bank
    knn_k: int = 5
    bank_capacity: int = 2048
    # optimization
    batch_size: int = 256
    lr: float = 2e-4
    weight_decay_d: float = 0.1
    weight_decay_g: float = 0.0
    ema_decay: float = 0.999
    n_dis: int = 1
    total_steps: int = 20000
    log_interval: int = 100
    checkpoint_interval: int = 0
    # architecture
    embed_dim: int = 32
    prior_dim: int = 32
    hidden_width: int = 256
    hidden_layers: int = 4
    group_size: int = 16
    # data
    n_train: int = 4000
    n_val: int = 2000
    noise_sd: float = 0.02
    # seeds
    data_seed: int = 0
    model_seed: int = 1
    train_seed: int = 2
    eval_seed: int = 3

    def __post_init__(self):
        if self.distance not in DISTANCE_CHOICES:
            raise ConfigError(f"distance must be one of {DISTANCE_CHOICES}, got {self.distance!r}")
        for name in ("lambda_c", "lambda_s", "lambda_h"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.n_dis < 1:
            raise ConfigError("n_dis must be at least 1")
        if self.power_steps < 1:
            raise ConfigError("power_steps must be at least 1")
        if self.lip_target <= 0:
            raise ConfigError("lip_target must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.total_steps < 0 or self.log_interval < 1 or self.checkpoint_interval < 0:
            raise ConfigError("step counts must be nonnegative and log_interval positive")
        if self.knn_k < 1 or self.bank_capacity < self.knn_k:
            raise ConfigError("need 1 <= knn_k <= bank_capacity")
        if self.fake_norm not in ("nk", "n"):
            raise ConfigError("fake_norm must be 'nk' or 'n'")
        if self.n_train < self.batch_size or self.n_val < 2:
            raise ConfigError("n_train must cover one batch and n_val must be at least 2")

    # -- derived pieces ------------------------------------------------------
    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            distance="jsd" if self.distance == "hinge" else self.distance,
            lambda_c=self.lambda_c,
            lambda_s=self.lambda_s,
            lambda_h=self.lambda_h,
            lip_target=self.lip_target,
            fake_norm=self.fake_norm,
            one_sided=self.one_sided_penalty,
        )

    def d_arch(self) -> Architecture:
        out = 1 if self.distance == "hinge" else self.embed_dim
        return Architecture(2, (self.hidden_width,) * self.hidden_layers, out, self.group_size)

    def g_arch(self) -> Architecture:
        return Architecture(self.prior_dim, (self.hidden_width,) * self.hidden_layers, 2, self.group_size)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    # -- text format -----------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value, types[key], lineno)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def _coerce(key: str, value: str, kind: type, lineno: int):
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0"):
                raise ValueError(value)
            return lowered in ("true", "1")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {value!r} for {key} ({kind.__name__})") from None
