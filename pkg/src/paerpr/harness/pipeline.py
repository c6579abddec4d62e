"""Benchmark construction and cached model training for the experiment suites.

Every trained model is keyed by a hash of everything that determines it:
the scene-set parameters, the seed, the training subset, the model and
schedule configuration, and the keys of the models it depends on. With a
cache directory, checkpoints are written as ``<kind>-<key>.ckpt`` and reused
on later runs with the same inputs.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..pae import PaeModel, train_pae
from ..regressors import AprModel, train_regressor
from ..scene_sim import (
    PairSet,
    SampleSet,
    SceneSpec,
    derive_seed,
    generate_scene,
    make_pairs,
    sample_dataset,
    subset_split,
)
from ..training import TrainConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, stable_hash

log = logging.getLogger(__name__)

CACHE_ENV = "PAERPR_CACHE"
# Bumped whenever training code changes in a way that invalidates old checkpoints.
CACHE_VERSION = 1


def default_cache_dir() -> Path | None:
    value = os.environ.get(CACHE_ENV)
    return Path(value) if value else None


@dataclass
class Benchmark:
    scenes: list[SceneSpec]
    train: SampleSet
    test: SampleSet

    @property
    def scene_bounds(self) -> list:
        return [(s.outer_min, s.outer_max) for s in self.scenes]


def build_benchmark(config: ExperimentConfig, seed: int) -> Benchmark:
    sc = config.scenes
    scenes = [generate_scene(seed, i, sc.num_landmarks) for i in range(sc.num_scenes)]
    opts = dict(noise_sigma=sc.noise_sigma, dropout_prob=sc.dropout_prob, max_perturb_deg=sc.max_perturb_deg)
    train = SampleSet.concatenate(
        [sample_dataset(s, sc.train_per_scene, derive_seed(seed, "train"), **opts) for s in scenes])
    test = SampleSet.concatenate(
        [sample_dataset(s, sc.test_per_scene, derive_seed(seed, "test"), **opts) for s in scenes])
    return Benchmark(scenes, train, test)


class Pipeline:
    """Trains (or loads) the models a suite needs, memoizing within a run."""

    def __init__(self, config: ExperimentConfig, cache_dir=None):
        self.config = config
        self.cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        self._benchmarks: dict[int, Benchmark] = {}
        self._models: dict[str, object] = {}
        self.trained: list[dict] = []

    # data ------------------------------------------------------------------
    def benchmark(self, seed: int) -> Benchmark:
        if seed not in self._benchmarks:
            self._benchmarks[seed] = build_benchmark(self.config, seed)
        return self._benchmarks[seed]

    def train_set(self, seed: int, k: float = 100) -> SampleSet:
        return subset_split(self.benchmark(seed).train, k, derive_seed(seed, "k-subset"))

    def pairs(self, seed: int, k: float = 100) -> PairSet:
        bench = self.benchmark(seed)
        pc = self.config.pairs
        max_dist = pc.max_dist_frac * max(s.diagonal for s in bench.scenes)
        return make_pairs(self.train_set(seed, k), max_dist, pc.max_angle_deg, pc.pairs_per_sample,
                          derive_seed(seed, "pairs", k))

    # keys ------------------------------------------------------------------
    def _schedule(self, kind: str, seed: int) -> TrainConfig:
        return dataclasses.replace(self.config.schedule.for_kind(kind), seed=seed)

    def data_key(self, seed: int, k: float) -> str:
        return stable_hash(CACHE_VERSION, self.config.scenes, seed, k)

    def apr_key(self, seed: int, k: float = 100) -> str:
        return stable_hash("apr", self.data_key(seed, k), self.config.model, self._schedule("apr", seed))

    def pae_key(self, seed: int, k: float = 100) -> str:
        return stable_hash("pae", self.apr_key(seed, k), self.config.pae, self._schedule("pae_model", seed))

    def rpr_key(self, kind: str, seed: int, k: float = 100, depth: int | None = None) -> str:
        upstream = self.pae_key(seed, k) if kind in ("pae", "tf") else self.apr_key(seed, k)
        return stable_hash("rpr", kind, upstream, self.config.pairs, self._model_config(depth),
                           self._schedule(kind, seed), self.config.warm_start_encoder)

    def _model_config(self, depth: int | None):
        if depth is None:
            return self.config.model
        return dataclasses.replace(self.config.model, num_layers=depth)

    # models ----------------------------------------------------------------
    def _cached(self, kind: str, key: str, build):
        name = f"{kind}-{key}"
        if name in self._models:
            return self._models[name]
        path = self.cache_dir / f"{name}.ckpt" if self.cache_dir else None
        if path is not None and path.exists():
            log.info("loading cached %s", path)
            model = load_checkpoint(path)
        else:
            model, history = build()
            model.eval()
            record = {"kind": kind, "key": key, "initial_loss": history.initial_loss,
                      "epoch_loss": history.epoch_loss}
            self.trained.append(record)
            if path is not None:
                save_checkpoint(model, path)
                path.with_suffix(".history.json").write_text(json.dumps(record, indent=1) + "\n")
        self._models[name] = model
        return model

    def apr(self, seed: int, k: float = 100) -> AprModel:
        def build():
            log.info("training APR seed=%s k=%s", seed, k)
            out = train_regressor("apr", self.train_set(seed, k), self.config.model, self._schedule("apr", seed))
            return out.model, out.history

        return self._cached("apr", self.apr_key(seed, k), build)

    def pae(self, seed: int, k: float = 100) -> PaeModel:
        def build():
            log.info("training PAE seed=%s k=%s", seed, k)
            return train_pae(self.apr(seed, k), self.train_set(seed, k), self.config.pae,
                             self._schedule("pae_model", seed), self.benchmark(seed).scene_bounds)

        return self._cached("pae_model", self.pae_key(seed, k), build)

    def rpr(self, kind: str, seed: int, k: float = 100, depth: int | None = None):
        def build():
            log.info("training %s RPR seed=%s k=%s depth=%s", kind, seed, k, depth)
            pae = self.pae(seed, k) if kind in ("pae", "tf") else None
            init = self.apr(seed, k).encoder if self.config.warm_start_encoder else None
            out = train_regressor(kind, self.train_set(seed, k), self._model_config(depth),
                                  self._schedule(kind, seed), pairs=self.pairs(seed, k), pae=pae,
                                  encoder_init=init)
            return out.model, out.history

        return self._cached(f"rpr_{kind}", self.rpr_key(kind, seed, k, depth), build)

    def test_observations(self, seed: int) -> np.ndarray:
        return self.benchmark(seed).test.observations.astype(np.float32)
