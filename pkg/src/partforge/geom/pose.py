"""Rigid transforms stored as translation plus intrinsic XYZ Euler angles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Map angles into (-pi, pi]. Works on scalars and arrays."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def euler_to_matrix(rx, ry, rz):
    """R = Rx(rx) @ Ry(ry) @ Rz(rz); inputs may be arrays of equal shape."""
    rx, ry, rz = np.asarray(rx, float), np.asarray(ry, float), np.asarray(rz, float)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    R = np.empty(rx.shape + (3, 3))
    R[..., 0, 0] = cy * cz
    R[..., 0, 1] = -cy * sz
    R[..., 0, 2] = sy
    R[..., 1, 0] = cx * sz + sx * sy * cz
    R[..., 1, 1] = cx * cz - sx * sy * sz
    R[..., 1, 2] = -sx * cy
    R[..., 2, 0] = sx * sz - cx * sy * cz
    R[..., 2, 1] = sx * cz + cx * sy * sz
    R[..., 2, 2] = cx * cy
    return R


def matrix_to_euler(R):
    """Inverse of :func:`euler_to_matrix` with ry in [-pi/2, pi/2]."""
    R = np.asarray(R, float)
    sy = np.clip(R[..., 0, 2], -1.0, 1.0)
    ry = np.arcsin(sy)
    gimbal = np.abs(sy) > 1.0 - 1e-12
    rx = np.where(gimbal, np.arctan2(R[..., 2, 1], R[..., 1, 1]),
                  np.arctan2(-R[..., 1, 2], R[..., 2, 2]))
    rz = np.where(gimbal, 0.0, np.arctan2(-R[..., 0, 1], R[..., 0, 0]))
    return wrap_angle(rx), ry, wrap_angle(rz)


def rotation_angle(Ra, Rb):
    """Geodesic angle between rotation matrices (broadcasting)."""
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


@dataclass(frozen=True)
class Pose6D:
    """Translation in meters and intrinsic XYZ Euler angles in radians.

    Angles are wrapped into (-pi, pi] on construction.
    """

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    def __post_init__(self):
        vals = (self.tx, self.ty, self.tz, self.rx, self.ry, self.rz)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose {vals}")
        for name in ("tx", "ty", "tz"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("rx", "ry", "rz"):
            object.__setattr__(self, name, float(wrap_angle(float(getattr(self, name)))))

    @classmethod
    def identity(cls) -> Pose6D:
        return cls()

    @classmethod
    def from_array(cls, arr) -> Pose6D:
        return cls(*(float(v) for v in arr))

    @classmethod
    def from_matrix(cls, R, t) -> Pose6D:
        rx, ry, rz = matrix_to_euler(R)
        return cls(t[0], t[1], t[2], float(rx), float(ry), float(rz))

    @classmethod
    def from_homogeneous(cls, H) -> Pose6D:
        H = np.asarray(H, float)
        return cls.from_matrix(H[:3, :3], H[:3, 3])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz])

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.rx, self.ry, self.rz)

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.rx, self.ry, self.rz])

    def as_homogeneous(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def __matmul__(self, other: Pose6D) -> Pose6D:
        return compose(self, other)


def compose(a: Pose6D, b: Pose6D) -> Pose6D:
    """Pose applying ``b`` first, then ``a``."""
    Ra, Rb = a.rotation, b.rotation
    return Pose6D.from_matrix(Ra @ Rb, Ra @ b.translation + a.translation)


def invert(p: Pose6D) -> Pose6D:
    R = p.rotation
    return Pose6D.from_matrix(R.T, -R.T @ p.translation)


def transform_points(p: Pose6D, points) -> np.ndarray:
    """Apply ``p`` to an (m, 3) array. PointCloud inputs are unwrapped."""
    pts = getattr(points, "points", points)
    pts = np.asarray(pts, float).reshape(-1, 3)
    return pts @ p.rotation.T + p.translation


def relative(a: Pose6D, b: Pose6D) -> Pose6D:
    """Pose of ``b`` expressed in the frame of ``a``: inv(a) o b."""
    return compose(invert(a), b)


def pose_close(a: Pose6D, b: Pose6D, tol: float = 1e-9) -> bool:
    """Compare as transforms so equivalent Euler triples match."""
    return (np.max(np.abs(a.translation - b.translation)) <= tol
            and np.max(np.abs(a.rotation - b.rotation)) <= tol)
