"""Camera pose auto-encoder: sinusoidal pose features -> MLP latents.

A trained absolute pose regressor acts as teacher (its latents supervise the
encoder) and as decoder (its regressor heads must recover the pose from the
encoder's latents).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .nn import MLP, Module, Parameter, Tensor, as_tensor, concat, no_grad, norm
from .pose_core import Pose, batch_pose_loss, quat_canonical
from .scene_sim import SampleSet, derive_seed
from .training import TrainConfig, TrainHistory, fit

if TYPE_CHECKING:
    from .regressors import AprModel


@dataclass(frozen=True)
class FourierSpec:
    num_bands: int = 6
    base_frequency: float = math.pi

    def __post_init__(self):
        if self.num_bands < 1:
            raise ValueError("num_bands must be >= 1")

    def encoded_length(self, d: int) -> int:
        return 2 * self.num_bands * d


def fourier_encode(v, spec: FourierSpec = FourierSpec()) -> np.ndarray:
    """[sin(2^k f v), cos(2^k f v)] for k = 0..B-1, concatenated band by band."""
    v = np.asarray(v, dtype=np.float64)
    parts = []
    for k in range(spec.num_bands):
        arg = (2.0 ** k) * spec.base_frequency * v
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


class LatentPair(NamedTuple):
    z_x: object
    z_q: object


@dataclass(frozen=True)
class PaeConfig:
    latent_dim: int = 256
    hidden: int = 256
    num_layers: int = 4
    num_bands: int = 6
    base_frequency: float = math.pi

    @property
    def embed_dim(self) -> int:
        return max(1, self.latent_dim // 4)


class PaeModel(Module):
    """Two branch MLPs over Fourier features of (normalized position, quaternion)
    concatenated with a learned per-scene embedding.

    ``scene_bounds`` holds each scene's outer (landmark) box as (min, max);
    positions are mapped to [-1, 1] relative to it before encoding.
    """

    kind = "pae"

    def __init__(self, config: PaeConfig, scene_bounds, seed: int = 0):
        super().__init__()
        self.config = config
        self.scene_bounds = np.asarray(scene_bounds, dtype=np.float64).reshape(-1, 2, 3)
        self.fourier = FourierSpec(config.num_bands, config.base_frequency)
        rng = np.random.default_rng(derive_seed(seed, "pae-init"))
        e = config.embed_dim
        self.scene_embedding = Parameter(rng.normal(0.0, 0.02, size=(self.num_scenes, e)))
        depth = [config.hidden] * (config.num_layers - 1)
        self.position_branch = MLP([self.fourier.encoded_length(3) + e, *depth, config.latent_dim], rng)
        self.orientation_branch = MLP([self.fourier.encoded_length(4) + e, *depth, config.latent_dim], rng)

    @property
    def num_scenes(self) -> int:
        return len(self.scene_bounds)

    def meta(self) -> dict:
        return {"config": asdict(self.config), "scene_bounds": self.scene_bounds.tolist()}

    def normalize_position(self, positions, scene_index) -> np.ndarray:
        lo = self.scene_bounds[scene_index, 0]
        hi = self.scene_bounds[scene_index, 1]
        return 2.0 * (positions - lo) / (hi - lo) - 1.0

    def forward(self, positions, orientations, scene_index) -> LatentPair:
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        orientations = np.atleast_2d(np.asarray(orientations, dtype=np.float64))
        scene_index = np.atleast_1d(np.asarray(scene_index, dtype=np.int64))
        if np.any(scene_index < 0) or np.any(scene_index >= self.num_scenes):
            raise IndexError(f"scene index out of range [0, {self.num_scenes})")
        dtype = self.dtype
        fx = fourier_encode(self.normalize_position(positions, scene_index), self.fourier).astype(dtype)
        fq = fourier_encode(quat_canonical(orientations), self.fourier).astype(dtype)
        emb = self.scene_embedding[scene_index]
        z_x = self.position_branch(concat([as_tensor(fx), emb], axis=-1))
        z_q = self.orientation_branch(concat([as_tensor(fq), emb], axis=-1))
        return LatentPair(z_x, z_q)


def encode_pose(model: PaeModel, pose: Pose, scene_index: int) -> LatentPair:
    with no_grad():
        z = model(pose.position, pose.orientation, scene_index)
    return LatentPair(z.z_x.data[0].copy(), z.z_q.data[0].copy())


def pae_training_loss(student: LatentPair, teacher: LatentPair, decoded, gt, s):
    """Latent distillation distances plus the uncertainty-weighted pose loss.

    ``decoded`` and ``gt`` are (position, quaternion) pairs, ``s`` anything with
    ``s_x``/``s_q``. Per-sample latent distances are averaged over the batch.
    """
    if _shape(student.z_x) != _shape(teacher.z_x) or _shape(student.z_q) != _shape(teacher.z_q):
        raise ValueError("student and teacher latents differ in shape")
    dist_x = norm(as_tensor(student.z_x) - teacher.z_x, axis=-1).mean()
    dist_q = norm(as_tensor(student.z_q) - teacher.z_q, axis=-1).mean()
    lp = batch_pose_loss(decoded[0], decoded[1], gt[0], gt[1], s.s_x, s.s_q)
    return dist_x + dist_q + lp


def _shape(v):
    return v.shape if hasattr(v, "shape") else np.shape(v)


class _PaeUncertainty(Module):
    def __init__(self, s_x: float, s_q: float):
        super().__init__()
        self.s_x = Parameter(np.float64(s_x))
        self.s_q = Parameter(np.float64(s_q))


class _PaeTrainee(Module):
    def __init__(self, pae: PaeModel, s: _PaeUncertainty):
        super().__init__()
        self.pae = pae
        self.uncertainty = s


def train_pae(teacher: AprModel, dataset: SampleSet, pae_config: PaeConfig,
              train_config: TrainConfig, scene_bounds, s_init=(0.0, -3.0)) -> tuple[PaeModel, TrainHistory]:
    """Distil a frozen APR teacher into a pose auto-encoder."""
    if len(dataset) == 0:
        raise ValueError("train_pae: empty dataset")
    dtype = np.dtype(train_config.dtype)
    teacher.freeze().eval()
    pae = PaeModel(pae_config, scene_bounds, seed=train_config.seed).astype(dtype)
    trainee = _PaeTrainee(pae, _PaeUncertainty(*s_init)).astype(dtype)

    with no_grad():
        z_x_all, z_q_all = [], []
        obs_all = dataset.observations.astype(dtype)
        for start in range(0, len(dataset), 512):
            z = teacher.latents(obs_all[start:start + 512])
            z_x_all.append(z.z_x.data)
            z_q_all.append(z.z_q.data)
        z_x_all = np.concatenate(z_x_all)
        z_q_all = np.concatenate(z_q_all)
    gt_x = dataset.positions.astype(dtype)
    gt_q = dataset.orientations.astype(dtype)

    def batch_loss(idx):
        student = pae(dataset.positions[idx], dataset.orientations[idx], dataset.scene_index[idx])
        dec_x, dec_q = teacher.decode(student.z_x, student.z_q)
        return pae_training_loss(student, LatentPair(z_x_all[idx], z_q_all[idx]),
                                 (dec_x, dec_q), (gt_x[idx], gt_q[idx]), trainee.uncertainty)

    history = fit(trainee, len(dataset), batch_loss, train_config, tag="pae")
    pae.eval()
    return pae, history
