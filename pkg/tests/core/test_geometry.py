# tests/core/test_geometry.py
import math

import numpy as np
import pytest

from src.core.geometry import (
    PointCloud,
    RigidTransform,
    UnitQuaternion,
    apply_transform,
    compose,
    euler_to_rotation,
    invert,
    quat_to_rotation,
    random_rotation,
    rot_z,
    rotation_to_euler,
)
from src.exceptions import NonUnitQuaternion, NotRigid


def test_point_cloud_rejects_bad_shapes():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 1.0]]))


def test_point_cloud_is_read_only():
    cloud = PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        cloud.points[0, 0] = 1.0


def test_identity_leaves_points_unchanged(rng):
    pts = rng.normal(size=(20, 3))
    np.testing.assert_array_equal(RigidTransform.identity().apply(pts), pts)


def test_compose_applies_right_operand_first(rng, rigid_transform):
    other = RigidTransform(rot_z(0.7), np.array([1.0, 2.0, 3.0]))
    pts = rng.normal(size=(10, 3))
    expected = rigid_transform.apply(other.apply(pts))
    np.testing.assert_allclose(compose(rigid_transform, other).apply(pts), expected, atol=1e-12)


def test_invert_round_trips(rng, rigid_transform):
    pts = rng.normal(size=(15, 3))
    back = invert(rigid_transform).apply(rigid_transform.apply(pts))
    np.testing.assert_allclose(back, pts, atol=1e-12)


def test_apply_transform_preserves_pairwise_distances(rng, rigid_transform):
    cloud = PointCloud(rng.normal(size=(30, 3)))
    moved = apply_transform(rigid_transform, cloud)
    d0 = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=-1)
    d1 = np.linalg.norm(moved.points[:, None] - moved.points[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-12)


def test_matrix_round_trip(rigid_transform):
    back = RigidTransform.from_matrix(rigid_transform.as_matrix())
    np.testing.assert_array_equal(back.rotation, rigid_transform.rotation)
    np.testing.assert_array_equal(back.translation, rigid_transform.translation)


def test_validate_rejects_reflection():
    with pytest.raises(NotRigid):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).validate()


def test_quaternion_sign_gives_identical_rotation(rng):
    q = UnitQuaternion.random(rng)
    np.testing.assert_array_equal(quat_to_rotation(q), quat_to_rotation(-q))


def test_quaternion_rotation_is_proper(rng):
    R = random_rotation(rng)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_non_unit_quaternion_rejected():
    with pytest.raises(NonUnitQuaternion):
        quat_to_rotation(UnitQuaternion(1.0, 1.0, 0.0, 0.0))


def test_quaternion_about_z_matches_rot_z():
    half = 0.4
    q = UnitQuaternion(math.cos(half), 0.0, 0.0, math.sin(half))
    np.testing.assert_allclose(quat_to_rotation(q), rot_z(2 * half), atol=1e-12)


def test_euler_round_trip(rng):
    for _ in range(20):
        ax, az = rng.uniform(-math.pi, math.pi, 2)
        ay = rng.uniform(-1.4, 1.4)
        angles = rotation_to_euler(euler_to_rotation(ax, ay, az))
        assert not angles.gimbal_lock
        np.testing.assert_allclose(euler_to_rotation(*angles.as_array()), euler_to_rotation(ax, ay, az),
                                   atol=1e-10)


def test_euler_gimbal_lock_sets_az_to_zero():
    R = euler_to_rotation(0.3, math.pi / 2, 0.2)
    angles = rotation_to_euler(R)
    assert angles.gimbal_lock
    assert angles.az == 0.0
    np.testing.assert_allclose(euler_to_rotation(*angles.as_array()), R, atol=1e-9)
