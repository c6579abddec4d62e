from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from paerpr.nn import Tensor
from paerpr.pose_core import (
    IDENTITY_QUAT,
    DegenerateQuaternionError,
    Pose,
    RelativePose,
    angular_error_degrees,
    apply_arrays,
    apply_relative,
    orientation_loss,
    pose_error,
    pose_loss,
    position_loss,
    quat_canonical,
    quat_conjugate,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    random_quaternion,
    relative_arrays,
    relative_pose,
)

RZ90 = np.array([math.sqrt(0.5), 0.0, 0.0, math.sqrt(0.5)])

quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: quat_normalize(v))
vecs = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


def to_scipy(q):
    q = np.asarray(q)
    return Rotation.from_quat(np.concatenate([q[..., 1:], q[..., :1]], axis=-1))


def same_rotation(a, b, tol=1e-9):
    return min(np.abs(a - b).max(), np.abs(a + b).max()) < tol


class TestQuaternionAlgebra:
    def test_i_times_j_is_k(self):
        np.testing.assert_array_equal(quat_multiply([0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])

    def test_identity_left(self):
        q = quat_normalize([0.3, -0.2, 0.9, 0.1])
        np.testing.assert_allclose(quat_multiply(IDENTITY_QUAT, q), q, atol=1e-15)

    def test_inverse(self):
        q = quat_normalize([0.3, -0.2, 0.9, 0.1])
        np.testing.assert_allclose(quat_multiply(q, quat_conjugate(q)), IDENTITY_QUAT, atol=1e-12)

    def test_conjugate_examples(self):
        np.testing.assert_array_equal(quat_conjugate(IDENTITY_QUAT), IDENTITY_QUAT)
        np.testing.assert_array_equal(quat_conjugate([0, 0, 0, 1]), [0, 0, 0, -1])

    @given(quats)
    def test_conjugate_involution(self, q):
        np.testing.assert_array_equal(quat_conjugate(quat_conjugate(q)), q)

    @given(quats, quats)
    def test_multiply_matches_scipy_composition(self, a, b):
        # a (x) b rotates by b first, then a
        expect = (to_scipy(a) * to_scipy(b)).as_matrix()
        np.testing.assert_allclose(quat_to_matrix(quat_multiply(a, b)), expect, atol=1e-12)

    @given(quats)
    def test_matrix_matches_scipy(self, q):
        np.testing.assert_allclose(quat_to_matrix(q), to_scipy(q).as_matrix(), atol=1e-12)

    @given(quats)
    def test_matrix_roundtrip(self, q):
        assert same_rotation(quat_from_matrix(quat_to_matrix(q)), q, 1e-9)
        assert quat_from_matrix(quat_to_matrix(q))[0] >= 0

    @given(quats)
    def test_unit_norm_after_multiply(self, q):
        assert abs(np.linalg.norm(quat_multiply(q, q)) - 1) < 1e-9

    @given(quats, vecs)
    def test_antipodal_same_rotation(self, q, v):
        np.testing.assert_allclose(quat_rotate(q, v), quat_rotate(-q, v), atol=1e-12)

    def test_canonical(self):
        np.testing.assert_array_equal(quat_canonical([-1, 0, 0, 0]), [1, 0, 0, 0])
        np.testing.assert_array_equal(quat_canonical([0.5, -0.5, 0.5, 0.5]), [0.5, -0.5, 0.5, 0.5])

    def test_normalize_rejects_zero(self):
        with pytest.raises(DegenerateQuaternionError):
            quat_normalize([0, 0, 0, 0])

    def test_axis_angle(self):
        np.testing.assert_allclose(quat_from_axis_angle([0, 0, 1], math.pi / 2), RZ90, atol=1e-15)

    def test_random_quaternion_unit(self):
        q = random_quaternion(np.random.default_rng(0), 100)
        np.testing.assert_allclose(np.linalg.norm(q, axis=-1), 1, atol=1e-12)


class TestRelativePose:
    def test_translation_only(self):
        d = relative_pose(Pose(np.zeros(3)), Pose(np.array([1.0, 0, 0])))
        np.testing.assert_allclose(d.dx, [1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(d.dq, IDENTITY_QUAT, atol=1e-15)

    def test_rotated_reference_oracle(self):
        ref = Pose(np.zeros(3), RZ90)
        d = relative_pose(ref, Pose(np.array([1.0, 0, 0])))
        rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
        np.testing.assert_allclose(d.dx, rz.T @ [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(d.dx, [0, -1, 0], atol=1e-12)

    @given(vecs, quats)
    def test_self_relative_is_identity(self, x, q):
        d = relative_pose(Pose(x, q), Pose(x, q))
        np.testing.assert_allclose(d.dx, 0, atol=1e-12)
        assert same_rotation(d.dq, IDENTITY_QUAT, 1e-12)

    def test_apply_translation(self):
        p = apply_relative(Pose(np.zeros(3)), RelativePose(np.array([0, 0, 2.0])))
        np.testing.assert_allclose(p.position, [0, 0, 2])

    def test_apply_rotated_reference(self):
        p = apply_relative(Pose(np.zeros(3), RZ90), RelativePose(np.array([1.0, 0, 0])))
        np.testing.assert_allclose(p.position, [0, 1, 0], atol=1e-12)

    @settings(max_examples=200)
    @given(vecs, quats, vecs, quats)
    def test_roundtrip(self, x1, q1, x2, q2):
        ref, query = Pose(x1, q1), Pose(x2, q2)
        back = apply_relative(ref, relative_pose(ref, query))
        np.testing.assert_allclose(back.position, query.position, atol=1e-9)
        assert same_rotation(back.orientation, query.orientation, 1e-9)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        xr, xq = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        qr, qq = random_quaternion(rng, 5), random_quaternion(rng, 5)
        dx, dq = relative_arrays(xr, qr, xq, qq)
        for i in range(5):
            d = relative_pose(Pose(xr[i], qr[i]), Pose(xq[i], qq[i]))
            np.testing.assert_allclose(dx[i], d.dx, atol=1e-14)
            np.testing.assert_allclose(dq[i], d.dq, atol=1e-14)
        x, q = apply_arrays(xr, qr, dx, dq)
        np.testing.assert_allclose(x, xq, atol=1e-12)

    def test_pose_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Pose(np.array([np.nan, 0, 0]))


class TestLosses:
    @pytest.mark.parametrize("x,x0,expect", [
        ([0, 0, 0], [0, 0, 0], 0.0),
        ([1, 0, 0], [0, 0, 0], 1.0),
        ([1, 1, 0], [0, 0, 0], math.sqrt(2)),
    ])
    def test_position_loss(self, x, x0, expect):
        assert position_loss(np.array(x, float), np.array(x0, float)) == pytest.approx(expect, abs=1e-15)

    @pytest.mark.parametrize("q,expect", [
        ([1, 0, 0, 0], 0.0),
        ([2, 0, 0, 0], 0.0),
        ([0, 1, 0, 0], math.sqrt(2)),
    ])
    def test_orientation_loss(self, q, expect):
        assert orientation_loss(np.array(q, float), IDENTITY_QUAT) == pytest.approx(expect, abs=1e-15)

    def test_orientation_loss_antipodal(self):
        q0 = quat_normalize([0.2, 0.5, -0.3, 0.7])
        assert orientation_loss(-q0, q0) == pytest.approx(0, abs=1e-15)
        assert orientation_loss(q0, -q0) == pytest.approx(0, abs=1e-15)

    def test_orientation_loss_rejects_degenerate(self):
        with pytest.raises(DegenerateQuaternionError):
            orientation_loss(np.zeros(4), IDENTITY_QUAT)

    @given(quats, quats, st.floats(1e-3, 1e3))
    def test_orientation_loss_scale_invariant(self, q, q0, lam):
        assert orientation_loss(lam * q, q0) == pytest.approx(orientation_loss(q, q0), abs=1e-12)

    @pytest.mark.parametrize("lx,lq,sx,sq,expect", [
        (1.0, 0.5, 0.0, 0.0, 1.5),
        (0.0, 0.0, 0.7, -1.2, 0.7 - 1.2),
        (2.0, 0.0, math.log(2), 0.0, 1 + math.log(2)),
    ])
    def test_pose_loss(self, lx, lq, sx, sq, expect):
        assert pose_loss(lx, lq, sx, sq) == pytest.approx(expect, abs=1e-12)

    def test_pose_loss_gradient_fd(self):
        vals = np.array([0.8, 0.3, 0.4, -0.9])
        leaves = [Tensor(np.float64(v), requires_grad=True) for v in vals]
        pose_loss(*leaves).backward()
        h = 1e-6
        for i, leaf in enumerate(leaves):
            up, dn = vals.copy(), vals.copy()
            up[i] += h
            dn[i] -= h
            fd = (pose_loss(*up) - pose_loss(*dn)) / (2 * h)
            rel = abs(fd - leaf.grad) / max(1e-8, abs(fd) + abs(leaf.grad))
            assert rel < 1e-6

    def test_tensor_losses_match_numpy(self):
        rng = np.random.default_rng(1)
        q, q0 = rng.normal(size=(6, 4)), random_quaternion(rng, 6)
        x, x0 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        np.testing.assert_allclose(orientation_loss(Tensor(q), q0).data, orientation_loss(q, q0), atol=1e-14)
        np.testing.assert_allclose(position_loss(Tensor(x), x0).data, position_loss(x, x0), atol=1e-14)


class TestAngularError:
    def test_examples(self):
        q = quat_normalize([0.1, 0.2, 0.3, 0.4])
        assert angular_error_degrees(q, q) == pytest.approx(0, abs=1e-6)
        assert angular_error_degrees(q, -q) == pytest.approx(0, abs=1e-6)
        assert angular_error_degrees(IDENTITY_QUAT, RZ90) == pytest.approx(90, abs=1e-9)

    @given(quats, quats)
    def test_matches_scipy_and_symmetric(self, a, b):
        expect = np.degrees((to_scipy(a).inv() * to_scipy(b)).magnitude())
        assert angular_error_degrees(a, b) == pytest.approx(expect, abs=1e-5)
        assert angular_error_degrees(a, b) == angular_error_degrees(b, a)
        assert 0 <= angular_error_degrees(a, b) <= 180

    @given(quats, quats, quats)
    def test_triangle_inequality(self, a, b, c):
        assert angular_error_degrees(a, c) <= angular_error_degrees(a, b) + angular_error_degrees(b, c) + 1e-6

    def test_pose_error(self):
        e = pose_error(Pose(np.array([1.0, 0, 0])), Pose(np.zeros(3), RZ90))
        assert e.position_error == pytest.approx(1)
        assert e.orientation_error == pytest.approx(90)
