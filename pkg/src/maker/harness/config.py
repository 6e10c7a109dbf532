"""Flat experiment configuration.

A config file is a flat YAML mapping of the keys below; nothing nests.  Any
key left out takes its default.  ``config_hash`` identifies a run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..forecaster import AblationFlags, ModelConfig
from ..ksl import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    # data: a canonical trajectory store, or synthetic tracks when data_path is empty
    data_path: str = ""
    dataset_name: str = "synthetic"
    synth_kind: str = "mixed"
    synth_count: int = 64
    synth_n: int = 72
    synth_noise: float = 2e-4
    synth_interval: str = "jittered:60,15"
    h: int = 24
    p: int = 24
    stride: int = 1
    split_train: float = 0.7
    split_val: float = 0.1
    # model
    patch_len: int = 16
    patch_stride: int = 8
    d_model: int = 16
    enc_layers: int = 2
    enc_heads: int = 4
    hidden: int = 500
    n_prototypes: int = 100
    d_dec: int = 64
    dec_layers: int = 2
    dec_heads: int = 4
    mask_ratio: float = 0.5
    dtype: str = "float32"
    # ablation flags
    use_llm: bool = True
    use_prompt: bool = True
    use_fusion: bool = True
    use_decoder: bool = True
    use_ksl: bool = True
    # training
    seed: int = 0
    lm_provider: str = "stub"
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 60
    lam0: float = 0.2
    growth: float = 1.0003
    gate_scope: str = "recon_kinematic"
    vel_weight: float = 1.0
    acc_weight: float = 1.0
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not (0 < self.split_train < 1 and 0 <= self.split_val < 1 and self.split_train + self.split_val < 1):
            raise ConfigError("split fractions must leave a non-empty test share")
        self.flags.validate()
        self.train_config()

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags(self.use_llm, self.use_prompt, self.use_fusion, self.use_decoder, self.use_ksl)

    def with_flags(self, flags: AblationFlags) -> "ExperimentConfig":
        return replace(self, **asdict(flags))

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            h=self.h, p=self.p, patch_len=self.patch_len, stride=self.patch_stride, d_model=self.d_model,
            enc_layers=self.enc_layers, enc_heads=self.enc_heads, hidden=self.hidden, n_prototypes=self.n_prototypes,
            d_dec=self.d_dec, dec_layers=self.dec_layers, dec_heads=self.dec_heads, mask_ratio=self.mask_ratio,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, lr=self.lr, epochs=self.epochs, lam0=self.lam0, growth=self.growth,
            gate_scope=self.gate_scope, vel_weight=self.vel_weight, acc_weight=self.acc_weight, seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, value in d.items():
            if isinstance(value, (dict, list)):
                raise ConfigError(f"config key {key!r} must be a scalar (flat config)")
            default = known[key].default
            try:
                if isinstance(default, bool):
                    value = _as_bool(value)
                elif isinstance(default, int):
                    value = int(value)
                elif isinstance(default, float):
                    value = float(value)
                else:
                    value = "" if value is None else str(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
            values[key] = value
        return cls(**values)


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("1", "true", "yes", "on"):
        return True
    if str(value).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a flat key: value mapping")
        data.update(loaded)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
