"""Pinhole projection and rigid-transform algebra.

Conventions used throughout the package:

* lengths are meters, angles radians;
* extrinsics map world coordinates into the camera frame, ``X_cam = R X + t``;
* a camera pose is the inverse transform (camera-in-world), ``(R_C, C)``;
* Euler angles are intrinsic ZYX, ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``,
  so ``yaw`` is the heading about the world z-axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NonPositiveDepth

DEPTH_EPS = 1e-12
ORTHO_TOL = 1e-9
GIMBAL_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths and principal point in pixels plus the image bounds."""

    fx: float
    fy: float
    px: float
    py: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.px <= self.width and 0 <= self.py <= self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_dfov(cls, width: int, height: int, dfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the principal point at the image center."""
        half_diag = 0.5 * math.hypot(width, height)
        f = half_diag / math.tan(math.radians(dfov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px],
                         [0.0, self.fy, self.py],
                         [0.0, 0.0, 1.0]])

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return ((uv[..., 0] >= 0) & (uv[..., 0] <= self.width)
                & (uv[..., 1] >= 0) & (uv[..., 1] <= self.height))

    def normalize(self, uv: np.ndarray) -> np.ndarray:
        """Pixel coordinates to normalized image coordinates (K^-1 applied)."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.px) / self.fx,
                         (uv[..., 1] - self.py) / self.fy], axis=-1)


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R @ R.T - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation. Used both as extrinsics and as camera pose."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _trusted(cls, R: np.ndarray, t: np.ndarray) -> "RigidTransform":
        """Skip validation; for results of operations that preserve SO(3)."""
        obj = object.__new__(cls)
        R = np.array(R, dtype=float)
        t = np.array(t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(obj, "rotation", R)
        object.__setattr__(obj, "translation", t)
        return obj

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "RigidTransform":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform._trusted(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a (3,) point or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform._trusted(self.rotation @ other.rotation,
                                       self.rotation @ other.translation + self.translation)

    def __repr__(self):
        return (f"RigidTransform(rotation={self.rotation.tolist()}, "
                f"translation={self.translation.tolist()})")


def extrinsics_to_camera_pose(e: RigidTransform) -> RigidTransform:
    """World-to-camera extrinsics to the camera pose in world coordinates."""
    return e.inverse()


def camera_pose_to_extrinsics(p: RigidTransform) -> RigidTransform:
    return p.inverse()


def project_points(K: CameraIntrinsics, extrinsics: RigidTransform,
                   points: np.ndarray) -> np.ndarray:
    """Project an (N, 3) array of world points to (N, 2) pixels.

    No clipping against the image bounds is done here. Raises
    ``NonPositiveDepth`` if any point is at or behind the camera plane.
    """
    pc = extrinsics.apply(points)
    z = pc[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepth("point at or behind the camera plane")
    return np.stack([K.fx * pc[..., 0] / z + K.px,
                     K.fy * pc[..., 1] / z + K.py], axis=-1)


def project_point(K: CameraIntrinsics, extrinsics: RigidTransform,
                  p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3)
    return project_points(K, extrinsics, p[None])[0]


def skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    x, y, z = (float(v) for v in w)
    theta2 = x * x + y * y + z * z
    if theta2 < 1e-16:
        # second-order Taylor expansion
        a, b = 1.0, 0.5
    else:
        theta = math.sqrt(theta2)
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.array([
        [1.0 - b * (y * y + z * z), b * x * y - a * z, b * x * z + a * y],
        [b * x * y + a * z, 1.0 - b * (x * x + z * z), b * y * z - a * x],
        [b * x * z - a * y, b * y * z + a * x, 1.0 - b * (x * x + y * y)],
    ])


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle vector with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(cos_theta)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * v
    if math.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / axis[k]
        axis /= np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * v


def rotation_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle in radians between two rotations."""
    return float(np.linalg.norm(so3_log(np.asarray(R_a) @ np.asarray(R_b).T)))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def rotation_to_euler(R: np.ndarray) -> EulerAngles:
    """Intrinsic ZYX decomposition of a rotation matrix.

    At gimbal lock (|pitch| within 1e-6 of pi/2) roll is fixed to zero, the
    whole residual rotation goes to yaw and ``gimbal_lock`` is set.
    """
    R = np.asarray(R, dtype=float)
    s = -float(np.clip(R[2, 0], -1.0, 1.0))
    pitch = math.asin(s)
    if math.pi / 2 - abs(pitch) < GIMBAL_TOL:
        pitch = math.copysign(math.pi / 2, s)
        # R[0,1] = sin(roll-yaw)*sin(pitch)... with roll = 0 only yaw remains
        yaw = math.atan2(-R[0, 1], R[1, 1])
        return EulerAngles(0.0, pitch, wrap_angle(yaw), True)
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return EulerAngles(wrap_angle(roll), pitch, wrap_angle(yaw), False)


@dataclass(frozen=True)
class EulerPose:
    """Camera position in meters plus ZYX Euler angles; yaw is the heading."""

    position: tuple[float, float, float]
    roll: float
    pitch: float
    yaw: float

    @classmethod
    def from_transform(cls, pose: RigidTransform) -> "EulerPose":
        ang = rotation_to_euler(pose.rotation)
        return cls(tuple(float(v) for v in pose.translation), ang.roll, ang.pitch, ang.yaw)

    def to_transform(self) -> RigidTransform:
        return RigidTransform(euler_to_rotation(self.roll, self.pitch, self.yaw),
                              np.asarray(self.position, dtype=float))

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
