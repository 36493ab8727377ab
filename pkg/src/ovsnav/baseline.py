"""Straight-line pose interpolation: the PBVS comparison reference.

The baseline plans nothing: it linearly interpolates position between the
start and goal poses, walks yaw along the shortest angular arc, keeps roll
and pitch at zero, and hands the result to the very same tracking
controller used by the optimized pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .dynamics import STATE_DIM, VehicleParams, hover_input
from .geometry import EulerAngles, Pose, wrap_angle
from .trajopt import Trajectory


@dataclass
class InterpolatedReference:
    """N+1 poses evenly spaced in time along the start-goal segment."""

    poses: List[Pose]
    dt: float


def interpolate_poses(start: Pose, goal: Pose, n: int, t0: float, tf: float) -> InterpolatedReference:
    """Linear position interpolation with shortest-arc yaw, level attitude."""
    if n < 1:
        raise ValueError("need at least one segment")
    if tf <= t0:
        raise ValueError("tf must exceed t0")
    dt = (tf - t0) / n
    yaw0 = start.orientation.yaw
    dyaw = wrap_angle(goal.orientation.yaw - yaw0)
    poses = []
    for k in range(n + 1):
        s = k / n
        pos = (1.0 - s) * start.position + s * goal.position
        poses.append(Pose(pos, EulerAngles(0.0, 0.0, wrap_angle(yaw0 + s * dyaw))))
    return InterpolatedReference(poses, dt)


def reference_to_trajectory(ref: InterpolatedReference, params: VehicleParams) -> Trajectory:
    """Shape interpolated poses into the trajectory interchange type.

    Velocities are annotated by central finite differences (zero at the
    endpoints, which start and end at rest); inputs are filled with the
    hover command, so tracking is feedforward-free.
    """
    n = len(ref.poses) - 1
    states = np.zeros((n + 1, STATE_DIM))
    for k, pose in enumerate(ref.poses):
        states[k, 0:3] = pose.position
        states[k, 3:6] = pose.orientation.as_array()
    for k in range(1, n):
        states[k, 6:9] = (states[k + 1, 0:3] - states[k - 1, 0:3]) / (2.0 * ref.dt)
    inputs = np.tile(hover_input(params).as_vector(), (n, 1))
    return Trajectory(states, inputs, ref.dt)
