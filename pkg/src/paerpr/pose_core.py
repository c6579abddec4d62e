"""Quaternion and rigid-pose algebra plus the pose losses and error metrics.

Conventions
-----------
- Quaternions are scalar-first ``(w, x, y, z)`` and use the Hamilton product.
- ``quat_multiply(a, b)`` rotates by ``b`` first, then by ``a``.
- A pose orientation ``q`` maps camera-frame vectors into the world frame:
  ``v_world = R(q) @ v_cam``.
- Relative poses are expressed in the reference camera frame:
  ``dx = R(q_ref)^T (x_query - x_ref)`` and ``q_query = q_ref * dq``.

Array functions accept a single quaternion/vector or a batch along leading axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .nn.tensor import Tensor, as_tensor, norm

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


class DegenerateQuaternionError(ValueError):
    """A regressed quaternion is too close to zero to normalize."""


# ---------------------------------------------------------------------------
# quaternion algebra on arrays

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateQuaternionError("cannot normalize a near-zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Flip sign so that w >= 0; q and -q are the same rotation."""
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., :1] < 0, -q, q)


def quat_multiply(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)
    return quat_normalize(out)


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q) -> np.ndarray:
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quat_from_matrix(m) -> np.ndarray:
    """Rotation matrix (or batch) to a canonical (w >= 0) unit quaternion."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    for i, r in enumerate(m):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        out[i] = q
    return quat_canonical(quat_normalize(out)).reshape(*batch, 4)


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) ``v`` by quaternion(s) ``q``."""
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=np.float64))


def random_quaternion(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform random rotation(s) via normalized Gaussian 4-vectors."""
    shape = (4,) if size is None else (*np.atleast_1d(size), 4)
    return quat_normalize(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# pose types

@dataclass
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.position)):
            raise ValueError("pose position must be finite")
        self.orientation = quat_normalize(np.asarray(self.orientation, dtype=np.float64).reshape(4))


@dataclass
class RelativePose:
    dx: np.ndarray
    dq: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64).reshape(3)
        self.dq = quat_normalize(np.asarray(self.dq, dtype=np.float64).reshape(4))


@dataclass
class UncertaintyParams:
    s_x: float = 0.0
    s_q: float = 0.0


class PoseError(NamedTuple):
    position_error: float
    orientation_error: float


def relative_arrays(x_ref, q_ref, x_query, q_query) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`relative_pose` on raw arrays."""
    r = quat_to_matrix(q_ref)
    d = np.asarray(x_query, dtype=np.float64) - np.asarray(x_ref, dtype=np.float64)
    dx = np.einsum("...ji,...j->...i", r, d)
    dq = quat_multiply(quat_conjugate(q_ref), q_query)
    return dx, dq


def apply_arrays(x_ref, q_ref, dx, dq) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`apply_relative` on raw arrays."""
    x = np.asarray(x_ref, dtype=np.float64) + quat_rotate(q_ref, dx)
    q = quat_multiply(q_ref, quat_normalize(dq))
    return x, q


def relative_pose(ref: Pose, query: Pose) -> RelativePose:
    dx, dq = relative_arrays(ref.position, ref.orientation, query.position, query.orientation)
    return RelativePose(dx, dq)


def apply_relative(ref: Pose, delta: RelativePose) -> Pose:
    x, q = apply_arrays(ref.position, ref.orientation, delta.dx, delta.dq)
    return Pose(x, q)


# ---------------------------------------------------------------------------
# losses (numpy or Tensor inputs; Tensor in -> Tensor out)

def _is_tensor(*values) -> bool:
    return any(isinstance(v, Tensor) for v in values)


def position_loss(x, x0):
    """Euclidean distance between positions, reduced over the last axis."""
    if _is_tensor(x, x0):
        return norm(as_tensor(x) - x0, axis=-1)
    return np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(x0, dtype=np.float64), axis=-1)


def orientation_loss(q, q0):
    """Chordal distance between ``q0`` and the normalized regression output ``q``.

    Both sides are sign-canonicalized (w >= 0) first so antipodal outputs are
    not penalized.
    """
    qd = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(qd, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateQuaternionError("regressed quaternion has norm < 1e-12")
    target = quat_canonical(quat_normalize(q0))
    sign = np.where(qd[..., :1] < 0, -1.0, 1.0).astype(qd.dtype)
    if _is_tensor(q):
        unit = q / norm(q, axis=-1, keepdims=True) * sign
        return norm(unit - target.astype(qd.dtype), axis=-1)
    return np.linalg.norm(qd / n * sign - target, axis=-1)


def _exp(v):
    return v.exp() if isinstance(v, Tensor) else np.exp(v)


def pose_loss(loss_x, loss_q, s_x, s_q):
    """Homoscedastic-uncertainty weighting of position and orientation losses."""
    return loss_x * _exp(-s_x) + s_x + loss_q * _exp(-s_q) + s_q


def batch_pose_loss(pred_x, pred_q, gt_x, gt_q, s_x, s_q):
    """Mean position and orientation losses over a batch, combined by :func:`pose_loss`."""
    lx = position_loss(pred_x, gt_x).mean()
    lq = orientation_loss(pred_q, gt_q).mean()
    return pose_loss(lx, lq, s_x, s_q)


# ---------------------------------------------------------------------------
# evaluation metrics

def angular_error_degrees(q1, q2):
    """Geodesic angle between rotations in degrees; antipodal-invariant."""
    q1 = quat_normalize(q1)
    q2 = quat_normalize(q2)
    dot = np.abs(np.sum(q1 * q2, axis=-1))
    return np.degrees(2.0 * np.arccos(np.clip(dot, 0.0, 1.0)))


def pose_error(estimate: Pose, truth: Pose) -> PoseError:
    return PoseError(
        float(np.linalg.norm(estimate.position - truth.position)),
        float(angular_error_degrees(estimate.orientation, truth.orientation)),
    )
