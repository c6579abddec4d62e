"""Experiment configuration: JSON in, JSON out, hashed for checkpoint caching.

Schema (every key optional; omitted keys take the defaults below)::

    {
      "seed": 0,                    # global seed; suites use "seeds"
      "seeds": [0, 1, 2],
      "depth_seeds": [0, 1, 2],     # seeds for the encoder-depth suite
      "scenes":   {"num_scenes", "num_landmarks", "train_per_scene", "test_per_scene",
                   "noise_sigma", "dropout_prob", "max_perturb_deg"},
      "pairs":    {"max_dist_frac", "max_angle_deg", "pairs_per_sample"},
      "model":    ModelConfig fields,
      "pae":      PaeConfig fields,
      "schedule": {"apr" | "pae" | "rpr" | "tf": TrainConfig fields},
      "warm_start_encoder": true,   # RPR encoders start from the APR encoder
      "k_percents": [100, 70, 50, 30],
      "iterations": [1, 2, 3],
      "depths": [2, 4, 6, 8],
      "cdf": {"position_max", "orientation_max", "points"},
      "output_dir": "runs"
    }

Dotted ``key=value`` overrides (``schedule.tf.epochs=5``) are applied on top
of a file; values are parsed as JSON when possible.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..pae import PaeConfig
from ..regressors import ModelConfig
from ..training import TrainConfig


@dataclass(frozen=True)
class SceneSetConfig:
    num_scenes: int = 7
    num_landmarks: int = 64
    train_per_scene: int = 2000
    test_per_scene: int = 500
    noise_sigma: float = 0.01
    dropout_prob: float = 0.05
    max_perturb_deg: float = 60.0


@dataclass(frozen=True)
class PairConfig:
    max_dist_frac: float = 0.1
    max_angle_deg: float = 40.0
    pairs_per_sample: int = 4


@dataclass(frozen=True)
class Schedule:
    apr: TrainConfig = field(default_factory=TrainConfig)
    pae: TrainConfig = field(default_factory=TrainConfig)
    rpr: TrainConfig = field(default_factory=TrainConfig)
    tf: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30))

    def for_kind(self, kind: str) -> TrainConfig:
        return {"apr": self.apr, "pae_model": self.pae, "img": self.rpr, "pae": self.rpr, "tf": self.tf}[kind]


@dataclass(frozen=True)
class CdfConfig:
    position_max: float = 0.3
    orientation_max: float = 20.0
    points: int = 31


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    depth_seeds: tuple = (0, 1, 2)
    scenes: SceneSetConfig = field(default_factory=SceneSetConfig)
    pairs: PairConfig = field(default_factory=PairConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pae: PaeConfig = field(default_factory=PaeConfig)
    schedule: Schedule = field(default_factory=Schedule)
    warm_start_encoder: bool = True
    k_percents: tuple = (100, 70, 50, 30)
    iterations: tuple = (1, 2, 3)
    depths: tuple = (2, 4, 6, 8)
    cdf: CdfConfig = field(default_factory=CdfConfig)
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if any(not 0 < k <= 100 for k in self.k_percents):
            raise ValueError("k_percents must lie in (0, 100]")
        if any(i < 1 for i in self.iterations):
            raise ValueError("iterations must be >= 1")
        if self.pae.latent_dim != self.model.latent_dim:
            raise ValueError("pae.latent_dim must equal model.latent_dim")
        if self.model.obs_dim != 3 * self.scenes.num_landmarks:
            raise ValueError(f"model.obs_dim must be 3 x scenes.num_landmarks = {3 * self.scenes.num_landmarks}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        return _build(cls, data)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")

    def with_overrides(self, overrides) -> ExperimentConfig:
        data = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"override {item!r} is not key=value")
            node = data
            parts = key.strip().split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise KeyError(f"unknown config key {key!r}")
                node = node[part]
            if parts[-1] not in node:
                raise KeyError(f"unknown config key {key!r}")
            try:
                node[parts[-1]] = json.loads(raw)
            except ValueError:
                node[parts[-1]] = raw
        return ExperimentConfig.from_dict(data)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def _build(cls, data):
    if not isinstance(data, dict):
        raise TypeError(f"{cls.__name__} expects an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise KeyError(f"{cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value)
        elif hint is tuple or typing.get_origin(hint) is tuple:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def stable_hash(*parts) -> str:
    """Short sha256 over the canonical JSON of ``parts``."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(value):
    if dataclasses.is_dataclass(value):
        return asdict(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot hash {type(value).__name__}")
