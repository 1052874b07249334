"""Run configuration: JSON file, then command-line overrides, then environment."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import TARGET_CHANNELS
from .model import ModelConfig

SEED_ENV = "NEUROWAVE_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    dataset_dir: str = "data/raw"
    features_dir: str = "data/features"
    split: str = "data/split.json"
    checkpoint: str = "runs/best.eckp"
    reports_dir: str = "runs/reports"


@dataclass
class PipelineSettings:
    channels: list = field(default_factory=lambda: list(TARGET_CHANNELS))
    montage: str | None = None
    filter_order: int = 4
    de_floor: float = 1e-12
    window_s: int = 1


@dataclass
class TrainSettings:
    epochs: int = 100


@dataclass
class HpoSettings:
    n_samples: int = 100
    proxy_epochs: int = 15
    workers: int = 1


@dataclass
class SynthSettings:
    n_trials_per_class: int = 20
    duration_s: float = 10.0
    sample_rate_hz: int = 200
    noise_floor: float = 0.3
    full_montage: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    hpo: HpoSettings = field(default_factory=HpoSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if not self.model.in_search_space():
            raise ConfigError(f"model config outside the search grid: {self.model.to_dict()}")
        self.model.check_divisible()
        if self.pipeline.window_s < 1:
            raise ConfigError("window_s must be >= 1")
        if self.pipeline.filter_order < 2:
            raise ConfigError("filter_order must be >= 2")
        if len(self.pipeline.channels) != 5:
            raise ConfigError("exactly five channels are required")


_SECTIONS = {
    "paths": Paths,
    "pipeline": PipelineSettings,
    "train": TrainSettings,
    "hpo": HpoSettings,
    "synth": SynthSettings,
}


def _merge(cls, current, patch: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(patch) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return dataclasses.replace(current, **patch)


def apply_patch(cfg: RunConfig, doc: dict) -> RunConfig:
    unknown = set(doc) - {"seed", "model", *_SECTIONS}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        if "seed" in doc:
            cfg = dataclasses.replace(cfg, seed=int(doc["seed"]))
        for key, cls in _SECTIONS.items():
            if key in doc:
                cfg = dataclasses.replace(cfg, **{key: _merge(cls, getattr(cfg, key), doc[key], key)})
        if "model" in doc:
            cfg = dataclasses.replace(cfg, model=_merge(ModelConfig, cfg.model, doc["model"], "model"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults <- JSON file <- ``overrides`` (same nesting) <- ``NEUROWAVE_SEED``."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        cfg = apply_patch(cfg, doc)
    if overrides:
        cfg = apply_patch(cfg, overrides)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg = dataclasses.replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfg
