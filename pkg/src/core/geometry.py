# src/core/geometry.py
"""
Rigid transforms, quaternions, Euler angles and the point cloud container.

All geometry is float64. Rotations act on column vectors: y = R @ x + t.
Point arrays are (N, 3) and are transformed as points @ R.T + t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional

import numpy as np

from src import constants as C
from src.exceptions import NonUnitQuaternion, NotRigid

if TYPE_CHECKING:
    from src.core.spatial_index import VoxelGridIndex


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    index: Optional["VoxelGridIndex"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, ids: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[np.asarray(ids, dtype=np.int64)])


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    # --------- construction ---------

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        M = np.asarray(matrix, dtype=np.float64)
        if M.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {M.shape}")
        return cls(M[:3, :3], M[:3, 3])

    # --------- conversions ---------

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def orthonormality_error(self) -> float:
        R = self.rotation
        return float(max(np.linalg.norm(R.T @ R - np.eye(3)), abs(np.linalg.det(R) - 1.0)))

    def validate(self, tol: float = C.ORTHONORMAL_TOL) -> "RigidTransform":
        err = self.orthonormality_error()
        if err > tol:
            raise NotRigid(f"rotation is not orthonormal with det +1 (error {err:.3e} > {tol:.1e})")
        return self


def apply_transform(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(T.apply(cloud.points))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """compose(a, b) applies b first, then a."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -(Rt @ T.translation))


# -------------------------
# Quaternions
# -------------------------

@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q: np.ndarray) -> "UnitQuaternion":
        w, x, y, z = (float(v) for v in np.asarray(q, dtype=np.float64).reshape(4))
        return cls(w, x, y, z)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "UnitQuaternion":
        q = rng.normal(size=4)
        return cls.from_array(q / np.linalg.norm(q))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def __neg__(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)


def quat_to_rotation(q: UnitQuaternion) -> np.ndarray:
    if abs(q.norm() - 1.0) > C.QUATERNION_UNIT_TOL:
        raise NonUnitQuaternion(f"quaternion norm {q.norm():.9f} is not 1")
    w, x, y, z = q.w, q.x, q.y, q.z
    # pairwise products keep R(q) == R(-q) bit for bit
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return quat_to_rotation(UnitQuaternion.random(rng))


# -------------------------
# Euler angles (intrinsic X-Y-Z: R = Rx(ax) @ Ry(ay) @ Rz(az))
# -------------------------

class EulerAngles(NamedTuple):
    ax: float
    ay: float
    az: float
    gimbal_lock: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.az])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(ax: float, ay: float, az: float) -> np.ndarray:
    return rot_x(ax) @ rot_y(ay) @ rot_z(az)


def rotation_to_euler(R: np.ndarray) -> EulerAngles:
    R = np.asarray(R, dtype=np.float64)
    cy = math.hypot(R[0, 0], R[0, 1])
    ay = math.atan2(R[0, 2], cy)
    if cy < C.GIMBAL_LOCK_TOL:
        # az := 0 tie-break, the remaining rotation is carried by ax
        ax = math.atan2(R[2, 1], R[1, 1])
        return EulerAngles(ax, ay, 0.0, True)
    ax = math.atan2(-R[1, 2], R[2, 2])
    az = math.atan2(-R[0, 1], R[0, 0])
    return EulerAngles(ax, ay, az, False)
