"""Two-stage localization: an APR estimate refined by a PAE-based RPR.

Each iteration encodes the current estimate with the RPR's PAE, regresses the
motion from that reference to the query and applies it. With the nearest-pose
reference, the first iteration instead starts from the database pose closest
(in position) to the APR estimate; later iterations always use the current
estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pose_core import (
    Pose,
    RelativePose,
    apply_arrays,
    apply_relative,
    quat_canonical,
    quat_from_axis_angle,
)
from .regressors import AprModel, PaeRprModel, TransformerRprModel
from .scene_sim import SampleSet

REFERENCE_SOURCES = ("apr_estimate", "nearest_training_pose")


class SceneMismatchError(ValueError):
    """Query scene unknown to the APR/RPR pair or the pose database."""


class PoseDatabase:
    """Training poses grouped by scene for nearest-pose lookup."""

    def __init__(self, positions, orientations, scene_index):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.orientations = np.asarray(orientations, dtype=np.float64).reshape(-1, 4)
        self.scene_index = np.asarray(scene_index, dtype=np.int64).reshape(-1)
        self._by_scene = {int(s): np.flatnonzero(self.scene_index == s) for s in np.unique(self.scene_index)}

    @classmethod
    def from_samples(cls, samples: SampleSet) -> PoseDatabase:
        return cls(samples.positions, samples.orientations, samples.scene_index)

    def __len__(self) -> int:
        return len(self.positions)

    def poses(self, scene_index: int) -> list[Pose]:
        return [Pose(self.positions[i], self.orientations[i]) for i in self._by_scene.get(int(scene_index), [])]

    def nearest_index(self, positions, scene_index) -> np.ndarray:
        """Row of the nearest stored pose (position L2, lowest index on ties) in each query's scene."""
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        scene_index = np.broadcast_to(np.asarray(scene_index, dtype=np.int64), (len(positions),))
        out = np.empty(len(positions), dtype=np.int64)
        for s in np.unique(scene_index):
            rows = np.flatnonzero(scene_index == s)
            members = self._by_scene.get(int(s))
            if members is None or len(members) == 0:
                raise SceneMismatchError(f"pose database has no poses for scene {int(s)}")
            d2 = ((positions[rows, None, :] - self.positions[members][None]) ** 2).sum(-1)
            out[rows] = members[np.argmin(d2, axis=1)]
        return out

    def nearest(self, positions, scene_index) -> tuple[np.ndarray, np.ndarray]:
        idx = self.nearest_index(positions, scene_index)
        return self.positions[idx], self.orientations[idx]


def nearest_pose(db: Sequence[Pose], query: Pose) -> Pose:
    """Database pose closest to ``query`` in position; ties go to the lowest index."""
    if len(db) == 0:
        raise ValueError("nearest_pose: empty database")
    positions = np.stack([p.position for p in db])
    d2 = ((positions - query.position) ** 2).sum(axis=1)
    return db[int(np.argmin(d2))]


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 1
    reference_source: str = "apr_estimate"
    database: PoseDatabase | None = field(default=None, compare=False)
    step_scale: float = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.reference_source not in REFERENCE_SOURCES:
            raise ValueError(f"reference_source must be one of {REFERENCE_SOURCES}")
        if self.reference_source == "nearest_training_pose" and self.database is None:
            raise ValueError("nearest_training_pose needs a pose database")


@dataclass
class RefinementTrace:
    """Poses p_0..p_i, deltas Delta_1..Delta_i and the reference each delta was applied to."""

    poses: list[Pose]
    deltas: list[RelativePose]
    references: list[Pose]

    @property
    def final(self) -> Pose:
        return self.poses[-1]

    def __len__(self) -> int:
        return len(self.poses)


@dataclass
class BatchTrace:
    """Batched trace: arrays shaped (i+1, N, .) for poses and (i, N, .) for deltas/references."""

    positions: np.ndarray
    orientations: np.ndarray
    dx: np.ndarray
    dq: np.ndarray
    ref_positions: np.ndarray
    ref_orientations: np.ndarray

    def item(self, n: int) -> RefinementTrace:
        return RefinementTrace(
            poses=[Pose(x[n], q[n]) for x, q in zip(self.positions, self.orientations)],
            deltas=[RelativePose(x[n], q[n]) for x, q in zip(self.dx, self.dq)],
            references=[Pose(x[n], q[n]) for x, q in zip(self.ref_positions, self.ref_orientations)],
        )


def _scaled(dx, dq, scale: float):
    if scale == 1.0:
        return dx, dq
    dq = quat_canonical(dq)
    angle = 2.0 * np.arccos(np.clip(dq[..., 0], -1.0, 1.0))
    axis = dq[..., 1:]
    small = np.linalg.norm(axis, axis=-1) < 1e-12
    axis = np.where(small[..., None], np.array([1.0, 0.0, 0.0]), axis)
    return scale * dx, quat_from_axis_angle(axis, scale * angle)


def refine_batch(apr: AprModel, rpr: PaeRprModel | TransformerRprModel, observations,
                 scene_index, cfg: RefineConfig = RefineConfig()) -> BatchTrace:
    """Refine a batch of queries; returns the full batched trace."""
    obs = np.atleast_2d(np.asarray(observations))
    scene_index = np.broadcast_to(np.asarray(scene_index, dtype=np.int64), (len(obs),)).copy()
    if np.any(scene_index < 0) or np.any(scene_index >= rpr.pae.num_scenes):
        raise SceneMismatchError(f"scene index outside the RPR's {rpr.pae.num_scenes} scenes")
    x, q = apr.predict(obs)
    xs, qs, dxs, dqs, rxs, rqs = [x], [q], [], [], [], []
    for t in range(cfg.iterations):
        if t == 0 and cfg.reference_source == "nearest_training_pose":
            rx, rq = cfg.database.nearest(x, scene_index)
        else:
            rx, rq = x, q
        dx, dq = rpr.predict(obs, rx, rq, scene_index)
        dx, dq = _scaled(dx, dq, cfg.step_scale)
        x, q = apply_arrays(rx, rq, dx, dq)
        xs.append(x)
        qs.append(q)
        dxs.append(dx)
        dqs.append(dq)
        rxs.append(rx)
        rqs.append(rq)
    return BatchTrace(np.stack(xs), np.stack(qs), np.stack(dxs), np.stack(dqs), np.stack(rxs), np.stack(rqs))


def refine_pose(apr: AprModel, rpr: PaeRprModel | TransformerRprModel, obs, scene_index: int,
                cfg: RefineConfig = RefineConfig()) -> tuple[Pose, RefinementTrace]:
    trace = refine_batch(apr, rpr, np.asarray(obs)[None], [scene_index], cfg).item(0)
    return trace.final, trace


def verify_trace(trace: RefinementTrace, atol: float = 1e-12) -> bool:
    """Re-check p_t = apply_relative(reference_t, Delta_t) for every step."""
    for t, delta in enumerate(trace.deltas):
        expect = apply_relative(trace.references[t], delta)
        got = trace.poses[t + 1]
        if not (np.allclose(expect.position, got.position, atol=atol, rtol=0)
                and np.allclose(expect.orientation, got.orientation, atol=atol, rtol=0)):
            return False
    return True
