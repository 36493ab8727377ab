"""Simulated target detection and goal-pose computation.

The detector stands in for an onboard fiducial pipeline: it projects the
true target into the camera, reports pixel coordinates, the camera-frame
3D position and the target yaw relative to the camera, each corrupted by
zero-mean Gaussian noise.  Visibility is decided on the noise-free
projection.

The goal pose is the vehicle pose from which the target appears at the
requested camera-frame offset, with the vehicle level (roll = pitch = 0)
and its heading composed from the observed relative yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import UavState
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    EulerAngles,
    Pose,
    euler_to_rotmat,
    project,
    rotation_matrices,
    wrap_angle,
    world_to_camera,
)


@dataclass(frozen=True)
class TargetObservation:
    """Detector output: pixel location, camera-frame position, relative yaw."""

    pixel: np.ndarray
    position_cam: np.ndarray
    yaw_rel: float

    def __post_init__(self):
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=float).reshape(2))
        object.__setattr__(self, "position_cam", np.asarray(self.position_cam, dtype=float).reshape(3))
        if self.position_cam[2] <= 0:
            raise ValueError("observed target must be in front of the camera")


@dataclass(frozen=True)
class DetectorNoise:
    """Gaussian detection-noise magnitudes and the stream seed."""

    sigma_pixel: float = 0.0
    sigma_position: float = 0.0
    sigma_yaw: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_pixel, self.sigma_position, self.sigma_yaw) < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class GoalSpec:
    """Where the target should sit relative to the camera at the goal."""

    desired_offset: np.ndarray
    desired_pixel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "desired_offset", np.asarray(self.desired_offset, dtype=float).reshape(3))
        object.__setattr__(self, "desired_pixel", np.asarray(self.desired_pixel, dtype=float).reshape(2))
        if self.desired_offset[2] <= 0:
            raise ValueError("desired target offset must be in front of the camera")


def camera_heading(ext: CameraExtrinsics) -> float:
    """Yaw of the camera optical axis in the body frame."""
    forward = ext.rotation[:, 2]
    return math.atan2(forward[1], forward[0])


def detect(
    target_pose_world: Pose,
    state: UavState,
    intr: CameraIntrinsics,
    ext: CameraExtrinsics,
    noise: DetectorNoise,
    rng: Optional[np.random.Generator] = None,
) -> Optional[TargetObservation]:
    """Simulate one detection; returns None when the target is not visible.

    A fixed number of noise samples is drawn per call regardless of the
    outcome so that parallel runs sharing a stream stay aligned.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    draws = rng.standard_normal(6)

    p_cam = world_to_camera(state, ext, target_pose_world.position)
    if p_cam[2] <= 1e-6:
        return None
    pixel = project(p_cam, intr)
    if not (0.0 <= pixel[0] < intr.width and 0.0 <= pixel[1] < intr.height):
        return None

    noisy_pixel = pixel + noise.sigma_pixel * draws[0:2]
    noisy_pixel[0] = min(max(noisy_pixel[0], 0.0), intr.width - 1e-9)
    noisy_pixel[1] = min(max(noisy_pixel[1], 0.0), intr.height - 1e-9)
    noisy_pos = p_cam + noise.sigma_position * draws[2:5]
    noisy_pos[2] = max(noisy_pos[2], 1e-3)

    yaw_rel = wrap_angle(
        target_pose_world.orientation.yaw - state.attitude.yaw - camera_heading(ext)
    )
    noisy_yaw = wrap_angle(yaw_rel + noise.sigma_yaw * draws[5])
    return TargetObservation(noisy_pixel, noisy_pos, noisy_yaw)


def target_world_from_observation(
    obs: TargetObservation, state: UavState, ext: CameraExtrinsics
) -> np.ndarray:
    """Reconstruct the target's inertial position from an observation."""
    r_ib = euler_to_rotmat(state.attitude)
    return state.position + r_ib @ (ext.rotation @ obs.position_cam + ext.translation)


def compute_goal_pose(
    obs: TargetObservation,
    state: UavState,
    ext: CameraExtrinsics,
    spec: GoalSpec,
) -> Pose:
    """Vehicle pose that places the target at the desired camera-frame offset.

    The target's inertial position is reconstructed from the observation,
    the goal heading composes the current yaw with the camera mounting and
    the observed relative yaw, and the goal position backs off from the
    target along the goal-orientation camera axis.  Roll and pitch are zero
    at the goal.
    """
    target_world = target_world_from_observation(obs, state, ext)
    goal_yaw = wrap_angle(state.attitude.yaw + camera_heading(ext) + obs.yaw_rel)
    r_goal = rotation_matrices(np.array([0.0, 0.0, goal_yaw]))
    goal_position = target_world - r_goal @ (ext.rotation @ spec.desired_offset + ext.translation)
    return Pose(goal_position, EulerAngles(0.0, 0.0, goal_yaw))
