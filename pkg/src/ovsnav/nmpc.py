"""Receding-horizon nonlinear MPC tracking a planned trajectory.

Every control tick re-solves a K-step optimal control problem whose stage
references slide along the global trajectory, and only the first input of
the solution is emitted.  The previous solution, shifted by one step,
warm-starts the next solve.  An estimated external force enters the
prediction model as an inertial-frame disturbance held constant over the
horizon.  The perception objective lives entirely in the global plan;
the controller cost is pure quadratic tracking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import ocp
from .dynamics import (
    INPUT_DIM,
    STATE_DIM,
    ControlInput,
    DynamicsModel,
    UavState,
    VehicleParams,
    hover_input,
    state_difference,
)
from .trajopt import CostWeights, Trajectory


@dataclass
class MpcConfig:
    """Horizon, rate, weights, input box and solver budget of the tracker."""

    horizon: int = 20
    dt: float = 0.02
    weights: Optional[CostWeights] = None
    u_min: ControlInput = ControlInput(-0.6, -0.6, -2.0, 0.0)
    u_max: ControlInput = ControlInput(0.6, 0.6, 2.0, 60.0)
    max_sqp_iterations: int = 8
    observer_gain: float = 0.3
    observer_max_force: float = 10.0
    observer_enabled: bool = True

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(self.u_min.as_vector() >= self.u_max.as_vector()):
            raise ValueError("u_min must be strictly below u_max")


@dataclass(frozen=True)
class DisturbanceEstimate:
    """Inertial-frame external-force estimate in newtons."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.force)):
            raise ValueError("force estimate must be finite")


@dataclass
class MpcSolution:
    """Solution of one tick: the emitted input plus the predicted tail."""

    first_input: ControlInput
    predicted_states: np.ndarray
    predicted_inputs: np.ndarray
    kkt_residual: float
    solve_time: float
    iterations: int = 0
    ok: bool = True


class _TrackingCost:
    """Quadratic deviation from per-stage state/input references."""

    def __init__(self, weights: CostWeights, x_ref: np.ndarray, u_ref: np.ndarray):
        self.q = weights.Q
        self.r = weights.R
        self.p = weights.P
        self.x_ref = x_ref
        self.u_ref = u_ref

    def value(self, states: np.ndarray, inputs: np.ndarray) -> float:
        dx = state_difference(states, self.x_ref)
        du = inputs - self.u_ref
        stage = 0.5 * np.einsum("ki,ij,kj->k", dx[:-1], self.q, dx[:-1]).sum()
        effort = 0.5 * np.einsum("ki,ij,kj->k", du, self.r, du).sum()
        terminal = 0.5 * dx[-1] @ self.p @ dx[-1]
        return float(stage + effort + terminal)

    def quadratics(self, states: np.ndarray, inputs: np.ndarray):
        n = inputs.shape[0]
        dx = state_difference(states, self.x_ref)
        du = inputs - self.u_ref
        wmats = np.empty((n + 1, STATE_DIM, STATE_DIM))
        wmats[:-1] = self.q
        wmats[-1] = self.p
        qvecs = np.empty((n + 1, STATE_DIM))
        qvecs[:-1] = dx[:-1] @ self.q
        qvecs[-1] = dx[-1] @ self.p
        rmats = np.broadcast_to(self.r, (n, INPUT_DIM, INPUT_DIM)).copy()
        rvecs = du @ self.r
        return wmats, qvecs, rmats, rvecs


def _reference_window(reference: Trajectory, ref_index: int, cfg: MpcConfig, params: VehicleParams):
    """Sample K+1 state and K input references starting at a control tick.

    ref_index counts controller ticks of length cfg.dt from the start of
    the reference trajectory; between trajectory knots the state reference
    is interpolated linearly and past the end it holds the final knot with
    hover feedforward.
    """
    k = cfg.horizon
    x_ref = np.empty((k + 1, STATE_DIM))
    u_ref = np.empty((k, INPUT_DIM))
    u_hover = hover_input(params).as_vector()
    for i in range(k + 1):
        t = (ref_index + i) * cfg.dt
        x, u = reference.sample(t)
        x_ref[i] = x
        if i < k:
            u_ref[i] = u_hover if t >= reference.duration else u
    return x_ref, u_ref


def shift_warm_start(prev: MpcSolution) -> MpcSolution:
    """Advance the previous solution one step, duplicating the last entry."""
    states = np.vstack([prev.predicted_states[1:], prev.predicted_states[-1:]])
    inputs = np.vstack([prev.predicted_inputs[1:], prev.predicted_inputs[-1:]])
    return MpcSolution(
        first_input=ControlInput.from_vector(inputs[0]),
        predicted_states=states,
        predicted_inputs=inputs,
        kkt_residual=prev.kkt_residual,
        solve_time=prev.solve_time,
        iterations=prev.iterations,
        ok=prev.ok,
    )


def mpc_step(
    x_est: UavState,
    d_est: DisturbanceEstimate,
    reference: Trajectory,
    ref_index: int,
    cfg: MpcConfig,
    warm: Optional[MpcSolution] = None,
    params: Optional[VehicleParams] = None,
) -> MpcSolution:
    """Solve one receding-horizon problem and return the full solution.

    The predicted states are re-integrated from the solved inputs so they
    satisfy the prediction model exactly.
    """
    if params is None:
        params = VehicleParams()
    if cfg.weights is None:
        raise ValueError("MpcConfig.weights must be set")
    t_start = time.perf_counter()

    model_params = replace(params, external_force=params.external_force + d_est.force)
    dyn = DynamicsModel(model_params, cfg.dt)
    x_ref, u_ref = _reference_window(reference, ref_index, cfg, params)
    cost = _TrackingCost(cfg.weights, x_ref, u_ref)

    u_min = cfg.u_min.as_vector()
    u_max = cfg.u_max.as_vector()
    if warm is not None and warm.predicted_inputs.shape[0] == cfg.horizon:
        states0 = warm.predicted_states.copy()
        inputs0 = warm.predicted_inputs.copy()
        states0[0] = x_est.as_vector()
    else:
        states0 = x_ref.copy()
        states0[0] = x_est.as_vector()
        inputs0 = u_ref.copy()

    result = ocp.solve_ocp(
        dyn,
        cost,
        x_est.as_vector(),
        states0,
        inputs0,
        u_min,
        u_max,
        max_iterations=cfg.max_sqp_iterations,
    )

    ok = bool(np.all(np.isfinite(result.states)) and np.all(np.isfinite(result.inputs)))
    if not ok:
        fallback = shift_warm_start(warm) if warm is not None else _hover_fallback(x_est, cfg, params)
        fallback.ok = False
        fallback.solve_time = time.perf_counter() - t_start
        return fallback

    inputs = np.clip(result.inputs, u_min[None, :], u_max[None, :])
    states = dyn.rollout(x_est.as_vector(), inputs)
    return MpcSolution(
        first_input=ControlInput.from_vector(inputs[0]),
        predicted_states=states,
        predicted_inputs=inputs,
        kkt_residual=result.kkt_residual,
        solve_time=time.perf_counter() - t_start,
        iterations=result.iterations,
        ok=True,
    )


def _hover_fallback(x_est: UavState, cfg: MpcConfig, params: VehicleParams) -> MpcSolution:
    traj = Trajectory.hover(x_est, params, cfg.horizon, cfg.dt)
    return MpcSolution(
        first_input=hover_input(params),
        predicted_states=traj.states,
        predicted_inputs=traj.inputs,
        kkt_residual=float("inf"),
        solve_time=0.0,
        iterations=0,
        ok=False,
    )


def estimate_disturbance(
    x_pred: UavState,
    x_meas: UavState,
    d_prev: DisturbanceEstimate,
    gain: float,
    dt: float,
    params: VehicleParams,
    max_force: float = 10.0,
) -> DisturbanceEstimate:
    """First-order force observer driven by the velocity prediction error."""
    if not 0.0 < gain <= 1.0:
        raise ValueError("gain must be in (0, 1]")
    innovation = (x_meas.velocity - x_pred.velocity) / dt
    force = d_prev.force + gain * params.mass * innovation
    norm = float(np.linalg.norm(force))
    if norm > max_force:
        force = force * (max_force / norm)
    return DisturbanceEstimate(force)
