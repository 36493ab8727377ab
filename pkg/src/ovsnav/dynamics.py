"""Continuous-time multirotor model and fixed-step RK4 integration.

State layout (9 components): position (3, inertial), attitude as ZYX Euler
angles (roll, pitch, yaw), velocity (3, inertial).
Input layout (4 components): commanded roll [rad], commanded pitch [rad],
commanded yaw rate [rad/s], collective thrust [N] along body z.

The translational model lumps the per-propeller thrust into one collective
force and folds blade flapping / induced drag into a single coefficient
applied to the body-frame airspeed.  Roll and pitch track their commands
through first-order inner loops; yaw rate is commanded directly.

The array-level helpers at the bottom accept batches (leading axes) and are
shared by the plant simulator and both optimizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import EulerAngles, rotation_matrices, rotation_matrix_partials, wrap_angle

STATE_DIM = 9
INPUT_DIM = 4


@dataclass(frozen=True)
class UavState:
    """Vehicle state: inertial position/velocity plus Euler attitude."""

    position: np.ndarray
    attitude: EulerAngles
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.attitude.as_array(), self.velocity])

    @staticmethod
    def from_vector(x: np.ndarray) -> "UavState":
        x = np.asarray(x, dtype=float).reshape(STATE_DIM)
        return UavState(x[0:3], EulerAngles(x[3], x[4], x[5]), x[6:9])


@dataclass(frozen=True)
class ControlInput:
    """Attitude/thrust command tuple sent to the inner loops."""

    roll_cmd: float
    pitch_cmd: float
    yaw_rate_cmd: float
    thrust_cmd: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.roll_cmd, self.pitch_cmd, self.yaw_rate_cmd, self.thrust_cmd])

    @staticmethod
    def from_vector(u: np.ndarray) -> "ControlInput":
        u = np.asarray(u, dtype=float).reshape(INPUT_DIM)
        return ControlInput(u[0], u[1], u[2], u[3])


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants plus identified inner-loop parameters."""

    mass: float = 2.8
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    drag_coeff: float = 0.016
    tau_roll: float = 0.18
    tau_pitch: float = 0.18
    gain_roll: float = 1.0
    gain_pitch: float = 1.0
    external_force: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        object.__setattr__(self, "external_force", np.asarray(self.external_force, dtype=float).reshape(3))
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.tau_roll <= 0 or self.tau_pitch <= 0:
            raise ValueError("inner-loop time constants must be positive")
        if self.drag_coeff < 0:
            raise ValueError("drag coefficient must be non-negative")

    @property
    def weight(self) -> float:
        """Gravitational force magnitude m*|g| in newtons."""
        return self.mass * float(np.linalg.norm(self.gravity))


def aero_force(thrust: float, params: VehicleParams, r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Body-frame drag force: thrust-scaled in-plane damping of the airspeed."""
    if thrust < 0:
        raise ValueError("thrust must be >= 0")
    vb = np.asarray(r, dtype=float).T @ np.asarray(v, dtype=float).reshape(3)
    k = params.drag_coeff
    return thrust * np.array([k * vb[0], k * vb[1], 0.0])


def state_derivative(x: UavState, u: ControlInput, params: VehicleParams) -> np.ndarray:
    """Time derivative of the 9-component state vector."""
    return derivative_array(x.as_vector(), u.as_vector(), params)


def rk4_step(x: UavState, u: ControlInput, dt: float, params: VehicleParams) -> UavState:
    """One classical RK4 step with the input held constant over dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return UavState.from_vector(rk4_array(x.as_vector(), u.as_vector(), dt, params))


def hover_input(params: VehicleParams) -> ControlInput:
    """Zero-attitude command with thrust balancing gravity."""
    return ControlInput(0.0, 0.0, 0.0, params.weight)


# ---------------------------------------------------------------------------
# Array-level core, batched over arbitrary leading axes.

def derivative_array(x: np.ndarray, u: np.ndarray, params: VehicleParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    r = rotation_matrices(x[..., 3:6])
    v = x[..., 6:9]
    thrust = u[..., 3]

    vb = np.einsum("...ji,...j->...i", r, v)
    k = params.drag_coeff
    force_body = np.empty_like(v)
    force_body[..., 0] = -thrust * k * vb[..., 0]
    force_body[..., 1] = -thrust * k * vb[..., 1]
    force_body[..., 2] = thrust
    accel = np.einsum("...ij,...j->...i", r, force_body) / params.mass
    accel += params.gravity + params.external_force / params.mass

    dx = np.empty_like(x)
    dx[..., 0:3] = v
    dx[..., 3] = (params.gain_roll * u[..., 0] - x[..., 3]) / params.tau_roll
    dx[..., 4] = (params.gain_pitch * u[..., 1] - x[..., 4]) / params.tau_pitch
    dx[..., 5] = u[..., 2]
    dx[..., 6:9] = accel
    return dx


def rk4_array(x: np.ndarray, u: np.ndarray, dt: float, params: VehicleParams,
              normalize_yaw: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = derivative_array(x, u, params)
    k2 = derivative_array(x + 0.5 * dt * k1, u, params)
    k3 = derivative_array(x + 0.5 * dt * k2, u, params)
    k4 = derivative_array(x + dt * k3, u, params)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if normalize_yaw:
        out[..., 5] = wrap_angle(out[..., 5])
    return out


def jacobian_arrays(x: np.ndarray, u: np.ndarray, params: VehicleParams):
    """Continuous-dynamics Jacobians d(dx)/dx (...,9,9) and d(dx)/du (...,9,4)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = x.shape[:-1]
    rpy = x[..., 3:6]
    v = x[..., 6:9]
    thrust = u[..., 3]
    m = params.mass
    k = params.drag_coeff

    r = rotation_matrices(rpy)
    partials = rotation_matrix_partials(rpy)
    kdiag = np.array([k, k, 0.0])
    vb = np.einsum("...ji,...j->...i", r, v)
    ez = np.array([0.0, 0.0, 1.0])

    fx = np.zeros(batch + (STATE_DIM, STATE_DIM))
    fu = np.zeros(batch + (STATE_DIM, INPUT_DIM))

    idx = np.arange(3)
    fx[..., idx, idx + 6] = 1.0
    fx[..., 3, 3] = -1.0 / params.tau_roll
    fx[..., 4, 4] = -1.0 / params.tau_pitch
    fu[..., 3, 0] = params.gain_roll / params.tau_roll
    fu[..., 4, 1] = params.gain_pitch / params.tau_pitch
    fu[..., 5, 2] = 1.0

    # Acceleration block: a = (thrust/m) * R (ez - Kd R^T v) + const.
    rk = r * kdiag  # R @ diag(kdiag), columns scaled
    fx[..., 6:9, 6:9] = -(thrust[..., None, None] / m) * np.einsum("...ik,...jk->...ij", rk, r)
    force_body = thrust[..., None] * (ez - kdiag * vb)
    for axis, dr in enumerate(partials):
        col = np.einsum("...ij,...j->...i", dr, force_body)
        col -= thrust[..., None] * np.einsum("...ij,...j->...i", rk, np.einsum("...ji,...j->...i", dr, v))
        fx[..., 6:9, 3 + axis] = col / m
    fu[..., 6:9, 3] = np.einsum("...ij,...j->...i", r, ez - kdiag * vb) / m
    return fx, fu


def rk4_with_jacobians(x: np.ndarray, u: np.ndarray, dt: float, params: VehicleParams):
    """RK4 step plus exact discrete Jacobians A = dF/dx, B = dF/du (batched)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    eye = np.broadcast_to(np.eye(STATE_DIM), x.shape[:-1] + (STATE_DIM, STATE_DIM))

    k1 = derivative_array(x, u, params)
    d1x, d1u = jacobian_arrays(x, u, params)

    x2 = x + 0.5 * dt * k1
    k2 = derivative_array(x2, u, params)
    f2x, f2u = jacobian_arrays(x2, u, params)
    d2x = f2x @ (eye + 0.5 * dt * d1x)
    d2u = f2x @ (0.5 * dt * d1u) + f2u

    x3 = x + 0.5 * dt * k2
    k3 = derivative_array(x3, u, params)
    f3x, f3u = jacobian_arrays(x3, u, params)
    d3x = f3x @ (eye + 0.5 * dt * d2x)
    d3u = f3x @ (0.5 * dt * d2u) + f3u

    x4 = x + dt * k3
    k4 = derivative_array(x4, u, params)
    f4x, f4u = jacobian_arrays(x4, u, params)
    d4x = f4x @ (eye + dt * d3x)
    d4u = f4x @ (dt * d3u) + f4u

    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    x_next[..., 5] = wrap_angle(x_next[..., 5])
    a = eye + (dt / 6.0) * (d1x + 2.0 * d2x + 2.0 * d3x + d4x)
    b = (dt / 6.0) * (d1u + 2.0 * d2u + 2.0 * d3u + d4u)
    return x_next, a, b


def state_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Componentwise a - b with the yaw component wrapped to [-pi, pi)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d[..., 5] = wrap_angle(d[..., 5])
    return d


class DynamicsModel:
    """Discrete prediction model: one RK4 step of fixed dt per stage."""

    def __init__(self, params: VehicleParams, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.params = params
        self.dt = dt

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return rk4_array(x, u, self.dt, self.params)

    def linearize(self, x: np.ndarray, u: np.ndarray):
        _, a, b = rk4_with_jacobians(x, u, self.dt, self.params)
        return a, b

    def rollout(self, x0: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Integrate a whole input sequence, returning len(inputs)+1 states."""
        n = len(inputs)
        states = np.empty((n + 1, STATE_DIM))
        states[0] = x0
        for k in range(n):
            states[k + 1] = rk4_array(states[k], inputs[k], self.dt, self.params)
        return states
