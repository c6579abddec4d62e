"""Deterministic synthetic scenes and landmark-bearing observations.

Each scene is a box of camera positions (diagonal normalized to 1.0) inside an
inflated box of landmarks. An observation is the concatenation of per-landmark
unit bearing vectors in the camera frame, with Gaussian noise and random
landmark occlusion. All randomness derives from explicit seeds.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .pose_core import (
    Pose,
    RelativePose,
    angular_error_degrees,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_to_matrix,
    relative_arrays,
)

log = logging.getLogger(__name__)

INFLATE = 1.5


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit seed from a base seed and arbitrary tags."""
    text = "/".join([str(int(seed))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1


@dataclass
class SceneSpec:
    scene_id: int
    seed: int
    num_landmarks: int
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    landmarks: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bounds_min + self.bounds_max)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds_max - self.bounds_min))

    @property
    def outer_min(self) -> np.ndarray:
        return self.center - INFLATE * 0.5 * (self.bounds_max - self.bounds_min)

    @property
    def outer_max(self) -> np.ndarray:
        return self.center + INFLATE * 0.5 * (self.bounds_max - self.bounds_min)

    @property
    def observation_dim(self) -> int:
        return 3 * self.num_landmarks

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "num_landmarks": self.num_landmarks,
            "bounds_min": self.bounds_min.tolist(),
            "bounds_max": self.bounds_max.tolist(),
            "landmarks": self.landmarks.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        return cls(
            scene_id=int(d["scene_id"]),
            seed=int(d["seed"]),
            num_landmarks=int(d["num_landmarks"]),
            bounds_min=np.asarray(d["bounds_min"], dtype=np.float64),
            bounds_max=np.asarray(d["bounds_max"], dtype=np.float64),
            landmarks=np.asarray(d["landmarks"], dtype=np.float64),
        )


def generate_scene(seed: int, scene_id: int, num_landmarks: int = 64) -> SceneSpec:
    if num_landmarks < 8:
        raise ValueError("a scene needs at least 8 landmarks")
    rng = np.random.default_rng(derive_seed(seed, "scene", scene_id))
    extent = rng.uniform(0.5, 1.0, size=3)
    extent /= np.linalg.norm(extent)
    offset = rng.uniform(-0.5, 0.5, size=3)
    bounds_min, bounds_max = offset - extent / 2, offset + extent / 2
    center = offset
    half_outer = INFLATE * extent / 2
    landmarks = rng.uniform(center - half_outer, center + half_outer, size=(num_landmarks, 3))
    return SceneSpec(scene_id, seed, num_landmarks, bounds_min, bounds_max, landmarks)


def render_batch(scene: SceneSpec, positions, orientations, noise_sigma: float = 0.0,
                 dropout_prob: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Observations for a batch of poses, shape (n, 3 * num_landmarks)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    orientations = np.atleast_2d(np.asarray(orientations, dtype=np.float64))
    rot = quat_to_matrix(orientations)                               # (n, 3, 3)
    rel = scene.landmarks[None, :, :] - positions[:, None, :]         # (n, L, 3)
    cam = np.einsum("nji,nlj->nli", rot, rel)                         # R^T (l - x)
    dist = np.linalg.norm(cam, axis=-1, keepdims=True)
    bearings = np.divide(cam, dist, out=np.zeros_like(cam), where=dist > 1e-12)
    if noise_sigma > 0 or dropout_prob > 0:
        if rng is None:
            raise ValueError("noise or dropout requested without an rng")
        if noise_sigma > 0:
            bearings = bearings + rng.normal(0.0, noise_sigma, size=bearings.shape)
        if dropout_prob > 0:
            keep = rng.random(bearings.shape[:2]) >= dropout_prob
            bearings = bearings * keep[..., None]
    return bearings.reshape(len(positions), -1)


def render_observation(scene: SceneSpec, pose: Pose, noise_sigma: float = 0.0,
                       dropout_prob: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    return render_batch(scene, pose.position, pose.orientation, noise_sigma, dropout_prob, rng)[0]


def look_at(positions, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world quaternions whose +z axis points at ``target`` (x right, y down)."""
    positions = np.atleast_2d(positions)
    fwd = np.asarray(target, dtype=np.float64) - positions
    fwd /= np.maximum(np.linalg.norm(fwd, axis=-1, keepdims=True), 1e-12)
    up = np.broadcast_to(np.asarray(up, dtype=np.float64), fwd.shape)
    right = np.cross(fwd, up)
    small = np.linalg.norm(right, axis=-1) < 1e-6
    right[small] = np.cross(fwd[small], [1.0, 0.0, 0.0])
    right /= np.linalg.norm(right, axis=-1, keepdims=True)
    down = np.cross(fwd, right)
    mats = np.stack([right, down, fwd], axis=-1)
    return quat_from_matrix(mats)


@dataclass
class Sample:
    observation: np.ndarray
    pose: Pose
    scene_index: int


@dataclass
class SampleSet:
    """Column-oriented dataset; indexing yields :class:`Sample` records."""

    observations: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray
    scene_index: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.observations[i], Pose(self.positions[i], self.orientations[i]),
                      int(self.scene_index[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def take(self, idx) -> SampleSet:
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.observations[idx], self.positions[idx],
                         self.orientations[idx], self.scene_index[idx])

    def for_scene(self, scene_index: int) -> SampleSet:
        return self.take(np.flatnonzero(self.scene_index == scene_index))

    @property
    def scenes(self) -> list[int]:
        return sorted(set(int(s) for s in self.scene_index))

    @staticmethod
    def concatenate(parts: Sequence[SampleSet]) -> SampleSet:
        return SampleSet(
            np.concatenate([p.observations for p in parts]),
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.orientations for p in parts]),
            np.concatenate([p.scene_index for p in parts]),
        )


def sample_poses(scene: SceneSpec, n: int, rng: np.random.Generator,
                 max_perturb_deg: float = 60.0) -> tuple[np.ndarray, np.ndarray]:
    positions = rng.uniform(scene.bounds_min, scene.bounds_max, size=(n, 3))
    base = look_at(positions, scene.center)
    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = np.radians(rng.uniform(0.0, max_perturb_deg, size=n))
    orientations = quat_multiply(base, quat_from_axis_angle(axes, angles))
    return positions, orientations


def sample_dataset(scene: SceneSpec, n: int, seed: int, scene_index: int | None = None,
                   noise_sigma: float = 0.01, dropout_prob: float = 0.05,
                   max_perturb_deg: float = 60.0) -> SampleSet:
    """``n`` poses uniform in the scene box, orientations in a cone around look-at-center."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "dataset", scene.scene_id))
    positions, orientations = sample_poses(scene, n, rng, max_perturb_deg)
    obs = render_batch(scene, positions, orientations, noise_sigma, dropout_prob, rng)
    idx = scene.scene_id if scene_index is None else scene_index
    return SampleSet(obs, positions, orientations, np.full(n, idx, dtype=np.int64))


@dataclass
class PairSpec:
    query: int
    reference: int
    relative: RelativePose


@dataclass
class PairSet:
    query: np.ndarray
    reference: np.ndarray
    dx: np.ndarray
    dq: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.query)

    def __getitem__(self, i: int) -> PairSpec:
        return PairSpec(int(self.query[i]), int(self.reference[i]), RelativePose(self.dx[i], self.dq[i]))

    def __iter__(self) -> Iterator[PairSpec]:
        for i in range(len(self)):
            yield self[i]


def default_max_dist(scenes: Sequence[SceneSpec]) -> float:
    return 0.1 * max(s.diagonal for s in scenes)


def make_pairs(dataset: SampleSet, max_dist: float, max_angle_deg: float,
               pairs_per_sample: int = 4, seed: int = 0) -> PairSet:
    """Up to ``pairs_per_sample`` references per query, drawn uniformly among
    same-scene samples within both the distance and angle thresholds.

    Samples without an eligible neighbour are skipped and counted in ``skipped``.
    """
    if max_dist <= 0 or max_angle_deg <= 0 or pairs_per_sample < 1:
        raise ValueError("thresholds and pairs_per_sample must be positive")
    rng = np.random.default_rng(derive_seed(seed, "pairs"))
    queries, refs = [], []
    skipped = 0
    for s in dataset.scenes:
        members = np.flatnonzero(dataset.scene_index == s)
        pos = dataset.positions[members]
        ori = dataset.orientations[members]
        for row, qi in enumerate(members):
            dist = np.linalg.norm(pos - pos[row], axis=-1)
            ang = angular_error_degrees(ori, ori[row])
            ok = (dist <= max_dist) & (ang <= max_angle_deg)
            ok[row] = False
            eligible = members[ok]
            if eligible.size == 0:
                skipped += 1
                continue
            k = min(pairs_per_sample, eligible.size)
            chosen = rng.choice(eligible, size=k, replace=False)
            queries.extend([qi] * k)
            refs.extend(chosen.tolist())
    if skipped:
        log.info("make_pairs: %d samples had no eligible reference", skipped)
    q = np.asarray(queries, dtype=np.int64)
    r = np.asarray(refs, dtype=np.int64)
    if len(q):
        dx, dq = relative_arrays(dataset.positions[r], dataset.orientations[r],
                                 dataset.positions[q], dataset.orientations[q])
    else:
        dx, dq = np.zeros((0, 3)), np.zeros((0, 4))
    return PairSet(q, r, dx, dq, skipped)


def subset_split(dataset: SampleSet, k_percent: float, seed: int) -> SampleSet:
    """Per-scene uniform sample of ceil(k * n / 100) items without replacement."""
    if not 0 < k_percent <= 100:
        raise ValueError("k_percent must be in (0, 100]")
    if k_percent == 100:
        return dataset
    rng = np.random.default_rng(derive_seed(seed, "subset", k_percent))
    keep = []
    for s in dataset.scenes:
        members = np.flatnonzero(dataset.scene_index == s)
        m = math.ceil(Fraction(k_percent).limit_denominator(10**6) * len(members) / 100)
        keep.append(np.sort(rng.choice(members, size=m, replace=False)))
    return dataset.take(np.concatenate(keep))
