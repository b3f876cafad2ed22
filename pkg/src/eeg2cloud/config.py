"""Run configuration: one JSON document covering every stage.

Every field has a default; loading rejects unknown keys so typos never pass
silently. CLI flags only override paths and seeds. The environment variable
``NEURO3D_DATA_DIR`` overrides the data root when set.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .features import LossConfig
from .signals import PreprocessConfig
from .synth import SynthConfig

DATA_DIR_ENV = "NEURO3D_DATA_DIR"


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    patch: int = 25
    agg_heads: int = 1
    feature_dim: int = 1024
    decouple_hidden: int = 1024


@dataclass(frozen=True)
class DiffusionConfig:
    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 50
    train_points: int = 2048
    widths: tuple[int, int, int] = (128, 256, 256)
    ctx_dim: int = 128


@dataclass(frozen=True)
class ColorConfig:
    hidden: int = 128
    palette_path: str | None = None  # defaults to the built-in palette


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.95, 0.999)
    weight_decay: float = 0.01
    batch_size: int = 64
    encoder_epochs: int = 80
    decoder_steps: int = 2000
    color_steps: int = 600
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 10


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    f1_tau: float = 0.05
    n_samples: int = 5
    classifier_steps: int = 600
    chance_trials: int = 100_000


@dataclass(frozen=True)
class RunConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    color: ColorConfig = field(default_factory=ColorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data_dir: str | None = None

    def resolve_data_dir(self, override: str | None = None) -> Path:
        env = os.environ.get(DATA_DIR_ENV)
        chosen = override or env or self.data_dir
        if chosen is None:
            raise ValueError(
                f"no data directory: pass --data, set {DATA_DIR_ENV}, or set data_dir in the config"
            )
        return Path(chosen)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name in _NESTED and cls is RunConfig:
            kwargs[name] = _build(_NESTED[name], value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    "preprocess": PreprocessConfig,
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "diffusion": DiffusionConfig,
    "color": ColorConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "synth": SynthConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path: "str | Path | None") -> RunConfig:
    """Load and validate a config file; ``None`` yields all defaults."""
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
