"""Global trajectory optimization with a target-reprojection cost.

The planned horizon is transcribed by direct multiple shooting: N+1 knot
states and N inputs, linked by one-RK4-step defect constraints.  The cost
is quadratic in the deviation from the goal state and from the hover
input, plus a weighted squared pixel error of the target's projection at
every stage.  A Gauss-Newton SQP (see ocp.py) solves the program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

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
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    rotation_matrices,
    rotation_matrix_partials,
)

# Depth below which a stage's pixel term switches to the out-of-view barrier.
MIN_TARGET_DEPTH = 0.05


class DimensionMismatch(ValueError):
    """Trajectory shape does not match the problem horizon."""


class InfeasibleStart(RuntimeError):
    """No knot of the initial guess sees the target in front of the camera."""


def _check_psd(name: str, mat: np.ndarray, size: int) -> np.ndarray:
    mat = np.asarray(mat, dtype=float).reshape(size, size)
    if np.abs(mat - mat.T).max() > 1e-9:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return mat


@dataclass(frozen=True)
class CostWeights:
    """Weight matrices of the trajectory cost and the tracking controller."""

    Q: np.ndarray
    R: np.ndarray
    H: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_psd("Q", self.Q, STATE_DIM))
        object.__setattr__(self, "R", _check_psd("R", self.R, INPUT_DIM))
        object.__setattr__(self, "H", _check_psd("H", self.H, 2))
        object.__setattr__(self, "P", _check_psd("P", self.P, STATE_DIM))


@dataclass
class Trajectory:
    """Time-stamped knot sequence: states (N+1, 9), inputs (N, 4), fixed dt."""

    states: np.ndarray
    inputs: np.ndarray
    dt: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, STATE_DIM)
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, INPUT_DIM)
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise DimensionMismatch("need exactly one more state than inputs")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[0]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def state(self, k: int) -> UavState:
        return UavState.from_vector(self.states[k])

    def input(self, k: int) -> ControlInput:
        return ControlInput.from_vector(self.inputs[k])

    def times(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) * self.dt

    def sample(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """State (linear interpolation) and input (zero-order hold) at time t.

        Past the final knot the trajectory holds its last state; the input
        there is unspecified by the plan and the last one is returned.
        """
        n = self.n_steps
        if t <= 0.0:
            return self.states[0].copy(), self.inputs[0].copy()
        if t >= self.duration:
            return self.states[n].copy(), self.inputs[n - 1].copy()
        pos = t / self.dt
        k = min(int(pos), n - 1)
        frac = pos - k
        x = self.states[k] + frac * state_difference(self.states[k + 1], self.states[k])
        return x, self.inputs[k].copy()

    @staticmethod
    def hover(x: UavState, params: VehicleParams, n: int, dt: float) -> "Trajectory":
        """Constant reference holding a state with hover inputs."""
        states = np.tile(x.as_vector(), (n + 1, 1))
        inputs = np.tile(hover_input(params).as_vector(), (n, 1))
        return Trajectory(states, inputs, dt)


TRAJECTORY_CSV_HEADER = "t,px,py,pz,roll,pitch,yaw,vx,vy,vz,u_roll,u_pitch,u_yawrate,u_thrust"


def save_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per knot; the final row repeats the last input."""
    with open(path, "w") as f:
        f.write(TRAJECTORY_CSV_HEADER + "\n")
        times = traj.times()
        for k in range(traj.states.shape[0]):
            u = traj.inputs[min(k, traj.n_steps - 1)]
            row = [times[k], *traj.states[k], *u]
            f.write(",".join(format(v, ".12g") for v in row) + "\n")


def load_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 14:
        raise ValueError("trajectory CSV must have 14 columns")
    if data.shape[0] < 2:
        raise ValueError("trajectory CSV needs at least two knots")
    dt = float(data[1, 0] - data[0, 0])
    return Trajectory(data[:, 1:10], data[:-1, 10:14], dt)


@dataclass
class TrajectoryProblem:
    """Inputs of the global planning program."""

    x_init: UavState
    x_goal: UavState
    target_world: np.ndarray
    desired_pixel: np.ndarray
    n_steps: int
    t0: float
    tf: float
    weights: CostWeights
    params: VehicleParams
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    u_min: np.ndarray = field(default_factory=lambda: np.array([-0.6, -0.6, -2.0, 0.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.6, 2.0, 60.0]))

    def __post_init__(self):
        self.target_world = np.asarray(self.target_world, dtype=float).reshape(3)
        self.desired_pixel = np.asarray(self.desired_pixel, dtype=float).reshape(2)
        self.u_min = np.asarray(self.u_min, dtype=float).reshape(INPUT_DIM)
        self.u_max = np.asarray(self.u_max, dtype=float).reshape(INPUT_DIM)
        if self.tf <= self.t0:
            raise ValueError("tf must exceed t0")
        if self.n_steps < 2:
            raise ValueError("need at least 2 steps")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be strictly below u_max")

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.n_steps

    @property
    def nominal_speed(self) -> float:
        dist = float(np.linalg.norm(self.x_goal.position - self.x_init.position))
        return dist / (self.tf - self.t0)


@dataclass
class SolveReport:
    """Solver diagnostics.  cost_history holds the defect-penalized cost at
    each accepted iterate; it equals the plain cost once defects are closed."""

    iterations: int
    final_cost: float
    max_dynamics_defect: float
    converged: bool
    cost_history: list
    kkt_residual: float = math.nan
    status: str = ""


# ---------------------------------------------------------------------------
# Reprojection machinery (batched over knots).

def _camera_chain(states: np.ndarray, target_world: np.ndarray, ext: CameraExtrinsics):
    """Camera-frame target positions and their state Jacobians for a batch.

    Returns (p_cam (n,3), jac (n,3,9)).
    """
    r_ib = rotation_matrices(states[..., 3:6])
    rel = target_world[None, :] - states[..., 0:3]
    body = np.einsum("kji,kj->ki", r_ib, rel)
    rc_t = ext.rotation.T
    p_cam = (body - ext.translation[None, :]) @ rc_t.T

    jac = np.zeros(states.shape[:-1] + (3, STATE_DIM))
    # d p_cam / d position = -Rc^T R^T
    jac[..., :, 0:3] = -np.einsum("ij,klj->kil", rc_t, r_ib)
    partials = rotation_matrix_partials(states[..., 3:6])
    for axis, dr in enumerate(partials):
        dbody = np.einsum("kji,kj->ki", dr, rel)
        jac[..., :, 3 + axis] = dbody @ rc_t.T
    return p_cam, jac


def _pixel_errors(p_cam: np.ndarray, desired_pixel: np.ndarray, intr: CameraIntrinsics):
    """Pixel errors and projection Jacobians; caller masks invalid depths."""
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    zs = np.where(np.abs(z) < 1e-12, 1e-12, z)
    err = np.stack(
        [intr.fx * x / zs + intr.cx - desired_pixel[0], intr.fy * y / zs + intr.cy - desired_pixel[1]],
        axis=-1,
    )
    jproj = np.zeros(p_cam.shape[:-1] + (2, 3))
    jproj[..., 0, 0] = intr.fx / zs
    jproj[..., 0, 2] = -intr.fx * x / zs**2
    jproj[..., 1, 1] = intr.fy / zs
    jproj[..., 1, 2] = -intr.fy * y / zs**2
    return err, jproj


def reprojection_error(
    x: UavState,
    target_world: np.ndarray,
    p_i: np.ndarray,
    intr: CameraIntrinsics,
    ext: CameraExtrinsics,
) -> Optional[np.ndarray]:
    """Pixel offset of the target from its desired image location.

    Returns None (out of view) when the target depth falls below the
    barrier threshold.
    """
    p_cam, _ = _camera_chain(x.as_vector()[None, :], np.asarray(target_world, float), ext)
    if p_cam[0, 2] <= MIN_TARGET_DEPTH:
        return None
    err, _ = _pixel_errors(p_cam, np.asarray(p_i, float), intr)
    return err[0]


def _barrier_scale(weights: CostWeights, intr: CameraIntrinsics) -> float:
    corner = np.array([0.5 * intr.width, 0.5 * intr.height])
    return float(0.5 * corner @ weights.H @ corner)


class _TrajCost:
    """Stage cost about the fixed goal plus the reprojection penalty."""

    def __init__(self, problem: TrajectoryProblem):
        self.p = problem
        self.x_goal = problem.x_goal.as_vector()
        self.u_hover = hover_input(problem.params).as_vector()
        self.barrier = _barrier_scale(problem.weights, problem.intrinsics)
        self.use_pixels = float(np.abs(problem.weights.H).max()) > 0.0

    def _pixel_terms(self, states: np.ndarray):
        p_cam, jac_cam = _camera_chain(states, self.p.target_world, self.p.extrinsics)
        err, jproj = _pixel_errors(p_cam, self.p.desired_pixel, self.p.intrinsics)
        je = jproj @ jac_cam
        valid = p_cam[..., 2] > MIN_TARGET_DEPTH
        return err, je, jac_cam, p_cam[..., 2], valid

    def pixel_cost_terms(self, states: np.ndarray):
        """Per-knot pixel cost, gradient and GN Hessian (barrier where hidden)."""
        n = states.shape[0]
        if not self.use_pixels:
            return np.zeros(n), np.zeros((n, STATE_DIM)), np.zeros((n, STATE_DIM, STATE_DIM))
        h = self.p.weights.H
        err, je, jac_cam, depth, valid = self._pixel_terms(states)
        he = err @ h.T
        cost = 0.5 * np.einsum("ki,ki->k", err, he)
        grad = np.einsum("kij,ki->kj", je, he)
        hess = np.einsum("kij,il,klm->kjm", je, h, je)

        if not valid.all():
            bad = ~valid
            cost[bad] = self.barrier * (1.0 + (MIN_TARGET_DEPTH - depth[bad]))
            grad[bad] = -self.barrier * jac_cam[bad][:, 2, :]
            hess[bad] = 0.0
        return cost, grad, hess

    def value(self, states: np.ndarray, inputs: np.ndarray) -> float:
        w = self.p.weights
        dx = state_difference(states, self.x_goal[None, :])
        du = inputs - self.u_hover[None, :]
        stage_q = 0.5 * np.einsum("ki,ij,kj->k", dx[:-1], w.Q, dx[:-1])
        stage_r = 0.5 * np.einsum("ki,ij,kj->k", du, w.R, du)
        pix, _, _ = self.pixel_cost_terms(states[:-1])
        terminal = 0.5 * dx[-1] @ w.P @ dx[-1]
        return float(stage_q.sum() + stage_r.sum() + pix.sum() + terminal)

    def quadratics(self, states: np.ndarray, inputs: np.ndarray):
        w = self.p.weights
        n = inputs.shape[0]
        dx = state_difference(states, self.x_goal[None, :])
        du = inputs - self.u_hover[None, :]

        wmats = np.empty((n + 1, STATE_DIM, STATE_DIM))
        qvecs = np.empty((n + 1, STATE_DIM))
        wmats[:-1] = w.Q
        qvecs[:-1] = dx[:-1] @ w.Q
        _, pgrad, phess = self.pixel_cost_terms(states[:-1])
        wmats[:-1] += phess
        qvecs[:-1] += pgrad
        wmats[-1] = w.P
        qvecs[-1] = dx[-1] @ w.P

        rmats = np.broadcast_to(w.R, (n, INPUT_DIM, INPUT_DIM)).copy()
        rvecs = du @ w.R
        return wmats, qvecs, rmats, rvecs


def stage_cost(x_k: UavState, u_k: ControlInput, problem: TrajectoryProblem) -> float:
    """Quadratic goal/effort terms plus the (possibly barriered) pixel term."""
    cost_model = _TrajCost(problem)
    dx = state_difference(x_k.as_vector(), cost_model.x_goal)
    du = u_k.as_vector() - cost_model.u_hover
    pix, _, _ = cost_model.pixel_cost_terms(x_k.as_vector()[None, :])
    return float(
        0.5 * dx @ problem.weights.Q @ dx + 0.5 * du @ problem.weights.R @ du + pix[0]
    )


def total_cost(traj: Trajectory, problem: TrajectoryProblem) -> float:
    """Summed stage costs plus the terminal goal penalty."""
    if traj.n_steps != problem.n_steps:
        raise DimensionMismatch(
            f"trajectory has {traj.n_steps} steps, problem expects {problem.n_steps}"
        )
    return _TrajCost(problem).value(traj.states, traj.inputs)


def cost_gradient(traj: Trajectory, problem: TrajectoryProblem) -> np.ndarray:
    """Exact gradient of total_cost over all knot states and inputs.

    Flat layout: states knot-major first (9 per knot, N+1 knots), then
    inputs (4 per knot, N knots).
    """
    if traj.n_steps != problem.n_steps:
        raise DimensionMismatch("trajectory/problem size mismatch")
    cost_model = _TrajCost(problem)
    _, qvecs, _, rvecs = cost_model.quadratics(traj.states, traj.inputs)
    return np.concatenate([qvecs.ravel(), rvecs.ravel()])


def _default_guess(problem: TrajectoryProblem) -> Trajectory:
    from .baseline import interpolate_poses, reference_to_trajectory
    from .geometry import Pose

    ref = interpolate_poses(
        Pose(problem.x_init.position, problem.x_init.attitude),
        Pose(problem.x_goal.position, problem.x_goal.attitude),
        problem.n_steps,
        problem.t0,
        problem.tf,
    )
    return reference_to_trajectory(ref, problem.params)


def solve_trajectory(
    problem: TrajectoryProblem,
    initial_guess: Optional[Trajectory] = None,
    kkt_tol: float = 1e-5,
    defect_tol: float = 1e-6,
    max_iterations: int = 150,
) -> Tuple[Trajectory, SolveReport]:
    """Solve the planning program, warm-started from the straight-line guess."""
    guess = initial_guess if initial_guess is not None else _default_guess(problem)
    if guess.n_steps != problem.n_steps:
        raise DimensionMismatch("initial guess horizon mismatch")

    cost_model = _TrajCost(problem)
    if cost_model.use_pixels:
        p_cam, _ = _camera_chain(guess.states, problem.target_world, problem.extrinsics)
        if np.all(p_cam[:, 2] <= MIN_TARGET_DEPTH):
            raise InfeasibleStart("target is behind the camera along the entire initial guess")

    dyn = DynamicsModel(problem.params, problem.dt)
    result = ocp.solve_ocp(
        dyn,
        cost_model,
        problem.x_init.as_vector(),
        guess.states,
        guess.inputs,
        problem.u_min,
        problem.u_max,
        kkt_tol=kkt_tol,
        defect_tol=defect_tol,
        max_iterations=max_iterations,
    )
    traj = Trajectory(result.states, result.inputs, problem.dt)
    report = SolveReport(
        iterations=result.iterations,
        final_cost=result.cost,
        max_dynamics_defect=result.max_defect,
        converged=result.converged,
        cost_history=result.merit_history,
        kkt_residual=result.kkt_residual,
        status=result.status,
    )
    return traj, report
