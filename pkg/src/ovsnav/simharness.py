"""Deterministic closed-loop simulator and comparison metrics.

An episode detects the target once, computes the goal pose, plans (either
the reprojection-optimal trajectory or the straight-line baseline), then
closes the loop: the tracker runs at the control rate while the plant,
optionally perturbed relative to the controller model, integrates at a
finer fixed step.  Per-tick detections with fresh noise feed the pixel
statistics.  All randomness derives from the scenario seed, so identical
scenarios reproduce byte-identical logs.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .baseline import interpolate_poses, reference_to_trajectory
from .dynamics import (
    ControlInput,
    UavState,
    VehicleParams,
    rk4_array,
    rk4_step,
)
from .geometry import CameraExtrinsics, CameraIntrinsics, EulerAngles, Pose
from .nmpc import (
    DisturbanceEstimate,
    MpcConfig,
    MpcSolution,
    estimate_disturbance,
    mpc_step,
    shift_warm_start,
)
from .perception import DetectorNoise, GoalSpec, compute_goal_pose, detect, target_world_from_observation
from .trajopt import (
    CostWeights,
    SolveReport,
    Trajectory,
    TrajectoryProblem,
    solve_trajectory,
)

METHOD_OVS = "ovs"
METHOD_PBVS = "pbvs"

EPISODE_CSV_HEADER = (
    "t,px,py,pz,roll,pitch,yaw,vx,vy,vz,"
    "u_roll,u_pitch,u_yawrate,u_thrust,pix_u,pix_v,visible"
)
COMPARISON_CSV_HEADER = (
    "tf,s_nom,method,avg_px_err,max_px_err,visibility,"
    "rms_thrust_N,rms_roll_deg,rms_pitch_deg,rms_yawrate"
)


class PlanningFailure(RuntimeError):
    """The global trajectory solver did not produce a usable plan."""


class TargetLostAtStart(RuntimeError):
    """The initial detection saw no target; no goal can be computed."""


@dataclass
class Scenario:
    """Everything one episode needs, in controller-model units."""

    x_init: UavState
    target_pose_world: Pose
    goal_spec: GoalSpec
    tf: float
    n_steps: int
    vehicle: VehicleParams
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    noise: DetectorNoise
    weights: CostWeights
    u_min: np.ndarray
    u_max: np.ndarray
    plant_mass_offset: float = 0.03
    plant_drag_offset: float = 0.20
    seed: int = 0
    settle_time: float = 1.0
    inner_dt: float = 1e-3

    def __post_init__(self):
        self.u_min = np.asarray(self.u_min, dtype=float).reshape(4)
        self.u_max = np.asarray(self.u_max, dtype=float).reshape(4)
        if self.inner_dt > 1e-3 + 1e-12:
            raise ValueError("plant integration step must be at most 1 ms")

    def plant_params(self) -> VehicleParams:
        """Perturbed truth model used only for plant integration."""
        return replace(
            self.vehicle,
            mass=self.vehicle.mass * (1.0 + self.plant_mass_offset),
            drag_coeff=self.vehicle.drag_coeff * (1.0 + self.plant_drag_offset),
        )


@dataclass
class EpisodeLog:
    """Per-tick closed-loop records plus the plan that produced them."""

    time: np.ndarray
    states_true: np.ndarray
    states_est: np.ndarray
    inputs: np.ndarray
    pixels: np.ndarray
    visible: np.ndarray
    method: str
    planned: Trajectory
    x_goal: UavState
    desired_pixel: np.ndarray
    intrinsics: CameraIntrinsics
    vehicle: VehicleParams
    report: Optional[SolveReport] = None


def save_episode_csv(log: EpisodeLog, path) -> None:
    with open(path, "w") as f:
        f.write(EPISODE_CSV_HEADER + "\n")
        for i in range(len(log.time)):
            row = [
                log.time[i],
                *log.states_true[i],
                *log.inputs[i],
                log.pixels[i, 0],
                log.pixels[i, 1],
            ]
            text = ",".join(format(v, ".12g") for v in row)
            f.write(f"{text},{int(log.visible[i])}\n")


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _episode_rngs(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    goal_rng = np.random.default_rng(_derive_seed(seed, 0))
    frame_rng = np.random.default_rng(_derive_seed(seed, 1))
    return goal_rng, frame_rng


def plan_trajectory(scenario: Scenario, method: str, mpc_cfg: MpcConfig):
    """Detect, compute the goal pose and build the reference trajectory.

    Returns (trajectory, x_goal, solve report or None).  The planner aims
    at the target position reconstructed from the (noisy) observation, not
    at the simulator's ground truth.
    """
    goal_rng, _ = _episode_rngs(scenario.seed)
    obs = detect(
        scenario.target_pose_world,
        scenario.x_init,
        scenario.intrinsics,
        scenario.extrinsics,
        scenario.noise,
        rng=goal_rng,
    )
    if obs is None:
        raise TargetLostAtStart("no detection from the initial state")
    goal_pose = compute_goal_pose(obs, scenario.x_init, scenario.extrinsics, scenario.goal_spec)
    x_goal = UavState(goal_pose.position, goal_pose.orientation, np.zeros(3))

    if method == METHOD_PBVS:
        ref = interpolate_poses(
            Pose(scenario.x_init.position, scenario.x_init.attitude),
            goal_pose,
            scenario.n_steps,
            0.0,
            scenario.tf,
        )
        return reference_to_trajectory(ref, scenario.vehicle), x_goal, None

    if method != METHOD_OVS:
        raise ValueError(f"unknown method {method!r}")
    target_est = target_world_from_observation(obs, scenario.x_init, scenario.extrinsics)
    problem = TrajectoryProblem(
        x_init=scenario.x_init,
        x_goal=x_goal,
        target_world=target_est,
        desired_pixel=scenario.goal_spec.desired_pixel,
        n_steps=scenario.n_steps,
        t0=0.0,
        tf=scenario.tf,
        weights=scenario.weights,
        params=scenario.vehicle,
        intrinsics=scenario.intrinsics,
        extrinsics=scenario.extrinsics,
        u_min=scenario.u_min,
        u_max=scenario.u_max,
    )
    traj, report = solve_trajectory(problem)
    if not np.all(np.isfinite(traj.states)):
        raise PlanningFailure(f"trajectory solve diverged ({report.status})")
    return traj, x_goal, report


def run_episode(scenario: Scenario, method: str, mpc_cfg: MpcConfig) -> EpisodeLog:
    """Simulate one full closed-loop flight and return its log."""
    traj, x_goal, report = plan_trajectory(scenario, method, mpc_cfg)
    _, frame_rng = _episode_rngs(scenario.seed)

    plant_params = scenario.plant_params()
    model_params = scenario.vehicle
    substeps = max(1, round(mpc_cfg.dt / scenario.inner_dt))
    inner_dt = mpc_cfg.dt / substeps

    n_ticks = int(round((scenario.tf + scenario.settle_time) / mpc_cfg.dt))
    times = np.empty(n_ticks)
    states_true = np.empty((n_ticks, 9))
    inputs = np.empty((n_ticks, 4))
    pixels = np.full((n_ticks, 2), np.nan)
    visible = np.zeros(n_ticks, dtype=bool)

    plant = scenario.x_init.as_vector().copy()
    d_est = DisturbanceEstimate()
    warm: Optional[MpcSolution] = None
    x_pred: Optional[UavState] = None

    for i in range(n_ticks):
        t = i * mpc_cfg.dt
        x_est = UavState.from_vector(plant)

        if mpc_cfg.observer_enabled and x_pred is not None:
            d_est = estimate_disturbance(
                x_pred, x_est, d_est, mpc_cfg.observer_gain, mpc_cfg.dt,
                model_params, mpc_cfg.observer_max_force,
            )

        guess = shift_warm_start(warm) if warm is not None else None
        sol = mpc_step(x_est, d_est, traj, i, mpc_cfg, warm=guess, params=model_params)
        warm = sol
        u = sol.first_input

        obs = detect(
            scenario.target_pose_world, x_est, scenario.intrinsics,
            scenario.extrinsics, scenario.noise, rng=frame_rng,
        )
        times[i] = t
        states_true[i] = plant
        inputs[i] = u.as_vector()
        if obs is not None:
            pixels[i] = obs.pixel
            visible[i] = True

        # One-step model prediction under the current disturbance estimate;
        # the observer measures what the estimate still misses.
        pred_params = replace(model_params, external_force=model_params.external_force + d_est.force)
        x_pred = rk4_step(x_est, u, mpc_cfg.dt, pred_params)

        u_vec = u.as_vector()
        for _ in range(substeps):
            plant = rk4_array(plant, u_vec, inner_dt, plant_params)

    return EpisodeLog(
        time=times,
        states_true=states_true,
        states_est=states_true.copy(),
        inputs=inputs,
        pixels=pixels,
        visible=visible,
        method=method,
        planned=traj,
        x_goal=x_goal,
        desired_pixel=scenario.goal_spec.desired_pixel.copy(),
        intrinsics=scenario.intrinsics,
        vehicle=scenario.vehicle,
        report=report,
    )


@dataclass
class ErrorStats:
    """Episode statistics mirroring the comparison-table columns."""

    avg_pixel_error: float
    max_pixel_error: float
    mse_series: np.ndarray
    visibility_fraction: float
    rms_thrust_n: float
    rms_thrust_to_weight: float
    rms_roll_deg: float
    rms_pitch_deg: float
    rms_yaw_rate: float


def compute_stats(log: EpisodeLog) -> ErrorStats:
    """Pixel-error and control-effort statistics over one episode.

    Ticks without a detection contribute the image half-diagonal as a
    penalty error; their share is visible separately in the visibility
    fraction.
    """
    if len(log.time) == 0:
        raise ValueError("empty episode log")
    penalty = log.intrinsics.half_diagonal()
    err = np.full(len(log.time), penalty)
    vis = log.visible.astype(bool)
    diffs = log.pixels[vis] - log.desired_pixel[None, :]
    err[vis] = np.hypot(diffs[:, 0], diffs[:, 1])

    thrust = log.inputs[:, 3]
    rms_thrust = float(np.sqrt(np.mean(thrust**2)))
    weight = log.vehicle.weight
    return ErrorStats(
        avg_pixel_error=float(err.mean()),
        max_pixel_error=float(err.max()),
        mse_series=err**2,
        visibility_fraction=float(vis.mean()),
        rms_thrust_n=rms_thrust,
        rms_thrust_to_weight=rms_thrust / weight,
        rms_roll_deg=float(np.degrees(np.sqrt(np.mean(log.inputs[:, 0] ** 2)))),
        rms_pitch_deg=float(np.degrees(np.sqrt(np.mean(log.inputs[:, 1] ** 2)))),
        rms_yaw_rate=float(np.sqrt(np.mean(log.inputs[:, 2] ** 2))),
    )


@dataclass
class SweepRow:
    """One comparison-table cell: a method at one flight time."""

    tf: float
    s_nom: float
    method: str
    avg_px_err: float
    max_px_err: float
    visibility: float
    rms_thrust_n: float
    rms_roll_deg: float
    rms_pitch_deg: float
    rms_yawrate: float
    trials: int = 0
    failures: int = 0
    trial_stats: list = field(default_factory=list)


def nominal_speed(scenario: Scenario) -> float:
    """Start-to-goal distance over flight time, using the noise-free goal."""
    zero_noise = replace(scenario, noise=DetectorNoise(0.0, 0.0, 0.0, scenario.noise.seed))
    obs = detect(
        zero_noise.target_pose_world, zero_noise.x_init, zero_noise.intrinsics,
        zero_noise.extrinsics, zero_noise.noise,
    )
    if obs is None:
        raise TargetLostAtStart("no detection from the initial state")
    goal = compute_goal_pose(obs, zero_noise.x_init, zero_noise.extrinsics, zero_noise.goal_spec)
    return float(np.linalg.norm(goal.position - scenario.x_init.position)) / scenario.tf


def _run_cell_trial(args):
    scenario, method, mpc_cfg = args
    log = run_episode(scenario, method, mpc_cfg)
    return compute_stats(log)


def sweep_nominal_speeds(
    scenario_base: Scenario,
    tf_list: Sequence[float],
    methods: Sequence[str],
    trials: int,
    mpc_cfg: MpcConfig,
    workers: int = 1,
) -> List[SweepRow]:
    """Run the flight-time sweep and average statistics over trials.

    Each (tf, trial) pair gets its own derived seed, identical across
    methods so both track the same noisy goal.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = []
    cells = []
    for ti, tf in enumerate(tf_list):
        for method in methods:
            cells.append((tf, method))
            for trial in range(trials):
                seed = _derive_seed(scenario_base.seed, ti, trial)
                scenario = replace(scenario_base, tf=float(tf), seed=seed)
                jobs.append((scenario, method, mpc_cfg))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_stats = list(pool.map(_run_cell_trial, jobs, chunksize=1))
    else:
        all_stats = [_run_cell_trial(job) for job in jobs]

    rows = []
    idx = 0
    for tf, method in cells:
        cell_stats = all_stats[idx: idx + trials]
        idx += trials
        s_nom = nominal_speed(replace(scenario_base, tf=float(tf)))
        rows.append(
            SweepRow(
                tf=float(tf),
                s_nom=s_nom,
                method=method,
                avg_px_err=float(np.mean([s.avg_pixel_error for s in cell_stats])),
                max_px_err=float(np.mean([s.max_pixel_error for s in cell_stats])),
                visibility=float(np.mean([s.visibility_fraction for s in cell_stats])),
                rms_thrust_n=float(np.mean([s.rms_thrust_n for s in cell_stats])),
                rms_roll_deg=float(np.mean([s.rms_roll_deg for s in cell_stats])),
                rms_pitch_deg=float(np.mean([s.rms_pitch_deg for s in cell_stats])),
                rms_yawrate=float(np.mean([s.rms_yaw_rate for s in cell_stats])),
                trials=trials,
                trial_stats=cell_stats,
            )
        )
    return rows


def write_comparison_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w") as f:
        f.write(COMPARISON_CSV_HEADER + "\n")
        for r in rows:
            values = [
                r.tf, r.s_nom, r.method, r.avg_px_err, r.max_px_err, r.visibility,
                r.rms_thrust_n, r.rms_roll_deg, r.rms_pitch_deg, r.rms_yawrate,
            ]
            f.write(
                ",".join(v if isinstance(v, str) else format(v, ".9g") for v in values) + "\n"
            )
