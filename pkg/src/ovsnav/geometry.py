"""Rotations, frame transforms and the pinhole camera model.

Conventions used throughout the package:

* ZYX Euler angles (roll about x, pitch about y, yaw about z), composed as
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.  ``R`` maps body-frame vectors
  into the inertial frame.
* Camera optical frame: z forward (along the optical axis), x right,
  y down.  No lens distortion.

All types are immutable values and every function is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .dynamics import UavState

TWO_PI = 2.0 * math.pi


class GimbalLockError(ValueError):
    """Pitch is at +/-90 deg, where roll and yaw are not separable."""


class BehindCameraError(ValueError):
    """Point has non-positive depth along the optical axis."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to [-pi, pi)."""
    return (angle + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class EulerAngles:
    """ZYX Euler attitude in radians."""

    roll: float
    pitch: float
    yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw], dtype=float)


@dataclass(frozen=True)
class Pose:
    """Inertial-frame position [m] plus attitude."""

    position: np.ndarray
    orientation: EulerAngles

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def half_diagonal(self) -> float:
        """Half the image diagonal in pixels."""
        return 0.5 * math.hypot(self.width, self.height)


@dataclass(frozen=True)
class CameraExtrinsics:
    """Camera mounting: origin in the body frame and camera-to-body rotation."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-10 or abs(np.linalg.det(self.rotation) - 1.0) > 1e-10:
            raise ValueError("extrinsic rotation is not orthonormal")


# Front-facing mount: camera z (optical axis) along body x, camera x along
# -y (right), camera y along -z (down).
FRONT_CAMERA_ROTATION = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def rotation_matrices(rpy: np.ndarray) -> np.ndarray:
    """Body-to-inertial rotation matrices for a batch of (roll, pitch, yaw).

    ``rpy`` has shape (..., 3); the result has shape (..., 3, 3).
    """
    rpy = np.asarray(rpy, dtype=float)
    cr, sr = np.cos(rpy[..., 0]), np.sin(rpy[..., 0])
    cp, sp = np.cos(rpy[..., 1]), np.sin(rpy[..., 1])
    cy, sy = np.cos(rpy[..., 2]), np.sin(rpy[..., 2])

    r = np.empty(rpy.shape[:-1] + (3, 3), dtype=float)
    r[..., 0, 0] = cy * cp
    r[..., 0, 1] = cy * sp * sr - sy * cr
    r[..., 0, 2] = cy * sp * cr + sy * sr
    r[..., 1, 0] = sy * cp
    r[..., 1, 1] = sy * sp * sr + cy * cr
    r[..., 1, 2] = sy * sp * cr - cy * sr
    r[..., 2, 0] = -sp
    r[..., 2, 1] = cp * sr
    r[..., 2, 2] = cp * cr
    return r


def rotation_matrix_partials(rpy: np.ndarray):
    """Partial derivatives of rotation_matrices w.r.t. roll, pitch and yaw.

    Returns three arrays of shape (..., 3, 3): dR/droll, dR/dpitch, dR/dyaw.
    """
    rpy = np.asarray(rpy, dtype=float)
    cr, sr = np.cos(rpy[..., 0]), np.sin(rpy[..., 0])
    cp, sp = np.cos(rpy[..., 1]), np.sin(rpy[..., 1])
    cy, sy = np.cos(rpy[..., 2]), np.sin(rpy[..., 2])
    zero = np.zeros_like(cr)

    dr = np.empty(rpy.shape[:-1] + (3, 3), dtype=float)
    dr[..., 0, 0] = zero
    dr[..., 0, 1] = cy * sp * cr + sy * sr
    dr[..., 0, 2] = -cy * sp * sr + sy * cr
    dr[..., 1, 0] = zero
    dr[..., 1, 1] = sy * sp * cr - cy * sr
    dr[..., 1, 2] = -sy * sp * sr - cy * cr
    dr[..., 2, 0] = zero
    dr[..., 2, 1] = cp * cr
    dr[..., 2, 2] = -cp * sr

    dp = np.empty_like(dr)
    dp[..., 0, 0] = -cy * sp
    dp[..., 0, 1] = cy * cp * sr
    dp[..., 0, 2] = cy * cp * cr
    dp[..., 1, 0] = -sy * sp
    dp[..., 1, 1] = sy * cp * sr
    dp[..., 1, 2] = sy * cp * cr
    dp[..., 2, 0] = -cp
    dp[..., 2, 1] = -sp * sr
    dp[..., 2, 2] = -sp * cr

    dy = np.empty_like(dr)
    dy[..., 0, 0] = -sy * cp
    dy[..., 0, 1] = -sy * sp * sr - cy * cr
    dy[..., 0, 2] = -sy * sp * cr + cy * sr
    dy[..., 1, 0] = cy * cp
    dy[..., 1, 1] = cy * sp * sr - sy * cr
    dy[..., 1, 2] = cy * sp * cr + sy * sr
    dy[..., 2, 0] = zero
    dy[..., 2, 1] = zero
    dy[..., 2, 2] = zero
    return dr, dp, dy


def euler_to_rotmat(e: EulerAngles) -> np.ndarray:
    """Body-to-inertial rotation matrix of a ZYX Euler attitude."""
    return rotation_matrices(e.as_array())


def rotmat_to_euler(r: np.ndarray) -> EulerAngles:
    """Invert euler_to_rotmat.  Raises GimbalLockError near pitch = +/-90 deg."""
    r = np.asarray(r, dtype=float)
    if abs(r[2, 0]) >= 1.0 - 1e-9:
        raise GimbalLockError("pitch at +/-90 deg")
    pitch = -math.asin(r[2, 0])
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return EulerAngles(roll, pitch, yaw)


def world_to_camera(state: "UavState", ext: CameraExtrinsics, point_world: np.ndarray) -> np.ndarray:
    """Map an inertial-frame point into the camera optical frame.

    Chain: inertial -> body (via the state's attitude) -> camera (via the
    extrinsics).
    """
    point_world = np.asarray(point_world, dtype=float).reshape(3)
    r_ib = euler_to_rotmat(state.attitude)
    body = r_ib.T @ (point_world - state.position)
    return ext.rotation.T @ (body - ext.translation)


def project(point_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    point_cam = np.asarray(point_cam, dtype=float).reshape(3)
    z = point_cam[2]
    if z <= 1e-6:
        raise BehindCameraError(f"depth {z:.3g} m is not in front of the camera")
    return np.array(
        [
            intr.fx * point_cam[0] / z + intr.cx,
            intr.fy * point_cam[1] / z + intr.cy,
        ]
    )


def build_pixel_weight(intr: CameraIntrinsics, base_weight: float) -> np.ndarray:
    """Diagonal pixel-error weight, scaled up along the smaller image dimension.

    The base weight is assigned to the axis of the larger image dimension;
    the other axis is scaled by the dimension ratio, so that errors along
    the tighter field-of-view direction are penalized more.
    """
    if base_weight < 0:
        raise ValueError("base_weight must be >= 0")
    if intr.width >= intr.height:
        sigma = intr.width / intr.height
        return np.diag([base_weight, base_weight * sigma])
    sigma = intr.height / intr.width
    return np.diag([base_weight * sigma, base_weight])
