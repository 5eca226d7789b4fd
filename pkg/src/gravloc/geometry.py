"""Rotation and pose algebra for gravity-aligned localization.

Angle convention: intrinsic Z-Y-X, ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
``R`` rotates camera coordinates into world coordinates, so the world z
axis is the gravity axis and its direction seen from the camera depends on
pitch and roll only.

Image convention: +u right, +v down, camera +z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .config import TOL


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class GimbalLock(GeometryError):
    pass


class DegenerateTriple(GeometryError):
    pass


class NotCongruent(GeometryError):
    pass


def wrap_angle(x: float) -> float:
    """Wrap to (-pi, pi]; values already in range are returned unchanged."""
    x = float(x)
    if -math.pi < x <= math.pi:
        return x
    y = math.remainder(x, 2.0 * math.pi)
    if y <= -math.pi:
        y += 2.0 * math.pi
    return y


def cross3(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def norm3(a) -> float:
    return math.sqrt(float(a @ a))


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Attitude:
    """Pitch and roll of the camera relative to gravity, in radians."""

    pitch: float
    roll: float

    def __post_init__(self):
        pitch = wrap_angle(self.pitch)
        roll = wrap_angle(self.roll)
        if not abs(pitch) < math.pi / 2:
            raise GeometryError(f"pitch {self.pitch!r} outside (-pi/2, pi/2)")
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "roll", roll)

    @cached_property
    def matrix(self) -> np.ndarray:
        """``Ry(pitch) @ Rx(roll)``."""
        return rot_y(self.pitch) @ rot_x(self.roll)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        for v in (self.fx, self.fy, self.cx, self.cy):
            if not math.isfinite(v):
                raise GeometryError("intrinsics must be finite")

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalize(self, pixels) -> np.ndarray:
        """Pixels (..., 2) -> normalized image coordinates (..., 2)."""
        px = np.asarray(pixels, dtype=float)
        return np.stack([(px[..., 0] - self.cx) / self.fx, (px[..., 1] - self.cy) / self.fy], axis=-1)

    def project(self, points_cam) -> np.ndarray:
        """Camera-frame points (..., 3) -> pixels (..., 2). No cheirality check."""
        X = np.asarray(points_cam, dtype=float)
        z = X[..., 2]
        return np.stack([self.fx * X[..., 0] / z + self.cx, self.fy * X[..., 1] / z + self.cy], axis=-1)


@dataclass(frozen=True)
class ProjectionRay:
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise GeometryError("ray direction must be a finite 3-vector")
        n = norm3(d)
        if abs(n - 1.0) > 1e-12:
            d = d / n
        if not d[2] > 0:
            raise GeometryError("ray must point in front of the camera")
        object.__setattr__(self, "direction", d)


def pixel_to_ray(K: Intrinsics, pixel) -> ProjectionRay:
    u, v = pixel
    d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    return ProjectionRay(d / norm3(d))


def ray_to_pixel(K: Intrinsics, ray: ProjectionRay) -> np.ndarray:
    return K.project(ray.direction)


def _check_rotation(R: np.ndarray, tol: float) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise GeometryError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or np.linalg.det(R) < 0:
        raise GeometryError("rotation is not orthonormal with det +1")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        # composed chains accumulate a few ulps per product
        _check_rotation(R, 1e3 * TOL.orthonormal)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, x) -> np.ndarray:
        """Transform point(s) of shape (3,) or (N, 3)."""
        return np.asarray(x, dtype=float) @ self.rotation.T + self.translation

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def allclose(self, other: RigidTransform, atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Return ``A ∘ B`` (apply B first)."""
    return RigidTransform(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def invert(A: RigidTransform) -> RigidTransform:
    Rt = A.rotation.T
    return RigidTransform(Rt, -Rt @ A.translation)


def rotation_from_ypr(yaw: float, attitude: Attitude) -> np.ndarray:
    return rot_z(yaw) @ attitude.matrix


def ypr_from_rotation(R) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_ypr`; returns ``(yaw, pitch, roll)``."""
    R = np.asarray(R, dtype=float)
    if abs(R[2, 0]) > 1.0 - TOL.gimbal_lock:
        raise GimbalLock("pitch at +-pi/2, yaw and roll are not separable")
    pitch = math.atan2(-R[2, 0], math.hypot(R[2, 1], R[2, 2]))
    yaw = math.atan2(R[1, 0], R[0, 0])
    roll = math.atan2(R[2, 1], R[2, 2])
    return yaw, pitch, roll


@dataclass(frozen=True, eq=False)
class Pose:
    """Gravity-aligned camera pose.

    ``rotation`` maps camera to world coordinates and ``translation`` is the
    camera centre in the world frame.  :meth:`world_to_camera` gives the
    inverse transform used for projection.
    """

    yaw: float
    attitude: Attitude
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @cached_property
    def rotation(self) -> np.ndarray:
        return rotation_from_ypr(self.yaw, self.attitude)

    @property
    def pitch(self) -> float:
        return self.attitude.pitch

    @property
    def roll(self) -> float:
        return self.attitude.roll

    def camera_to_world(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)

    def world_to_camera(self) -> RigidTransform:
        R = self.rotation
        return RigidTransform(R.T, -R.T @ self.translation)

    def to_camera(self, points) -> np.ndarray:
        """World point(s) -> camera coordinates."""
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    @classmethod
    def from_world_to_camera(cls, R_cw, t_cw, attitude: Attitude | None = None) -> Pose:
        """Build from ``x_cam = R_cw @ x_world + t_cw``.

        With ``attitude`` given the pitch and roll are copied from it and only
        the yaw is read from ``R_cw``; otherwise all three angles are extracted.
        """
        R_wc = np.asarray(R_cw, dtype=float).T
        centre = -R_wc @ np.asarray(t_cw, dtype=float)
        if attitude is None:
            yaw, pitch, roll = ypr_from_rotation(R_wc)
            attitude = Attitude(pitch, roll)
        else:
            Rz = R_wc @ attitude.matrix.T
            yaw = math.atan2(Rz[1, 0], Rz[0, 0])
        return cls(yaw, attitude, centre)

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll, *self.translation])

    def __repr__(self):
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(yaw={self.yaw:.6g}, pitch={self.pitch:.6g}, roll={self.roll:.6g}, t=({t}))"


def _orthonormal_frame(p0, p1, p2) -> np.ndarray:
    """Columns e1, e2, e3 of a right-handed frame spanned by a point triple."""
    e1 = p1 - p0
    n1 = norm3(e1)
    w = cross3(e1, p2 - p0)
    nw = norm3(w)
    scale = max(n1, norm3(p2 - p0), 1e-300)
    if n1 < TOL.geometric * scale or nw < TOL.geometric * scale * scale:
        raise DegenerateTriple("points are collinear")
    e1 = e1 / n1
    e3 = w / nw
    return np.column_stack([e1, cross3(e3, e1), e3])


def frame_from_three_points(src, dst) -> RigidTransform:
    """Rigid transform taking each ``src[i]`` onto ``dst[i]``."""
    src = np.asarray(src, dtype=float).reshape(3, 3)
    dst = np.asarray(dst, dtype=float).reshape(3, 3)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        a = norm3(src[i] - src[j])
        b = norm3(dst[i] - dst[j])
        if abs(a - b) > TOL.geometric * max(a, b, 1.0):
            raise NotCongruent(f"edge {i}-{j}: {a!r} vs {b!r}")
    Fs = _orthonormal_frame(*src)
    Fd = _orthonormal_frame(*dst)
    R = Fd @ Fs.T
    return RigidTransform(R, dst[0] - R @ src[0])
