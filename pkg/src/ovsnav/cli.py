"""Command-line front end: plan a trajectory, run comparisons, replay logs.

Scenario files are flat ``key = value`` text with dotted keys, e.g.::

    vehicle.mass = 2.8
    start.position = 8 -12 14
    camera.fx = 455

Vector values are space-separated.  Every value can also be overridden on
the command line with ``--set key=value``.

Exit codes: 0 success, 1 usage or I/O error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dynamics import UavState, VehicleParams
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    EulerAngles,
    Pose,
    build_pixel_weight,
)
from .nmpc import ControlInput, MpcConfig
from .perception import DetectorNoise, GoalSpec
from .simharness import (
    METHOD_OVS,
    METHOD_PBVS,
    PlanningFailure,
    Scenario,
    TargetLostAtStart,
    nominal_speed,
    plan_trajectory,
    run_episode,
    save_episode_csv,
    sweep_nominal_speeds,
    write_comparison_csv,
)
from .trajopt import (
    CostWeights,
    InfeasibleStart,
    Trajectory,
    save_trajectory_csv,
    reprojection_error,
)

# Defaults for every tunable; scenario files and --set override by key.
DEFAULT_CONFIG: Dict[str, str] = {
    "scenario.seed": "1",
    "scenario.tf": "6.6",
    "scenario.n_steps": "55",
    "scenario.settle_time": "1.0",
    "start.position": "0 0 2",
    "start.attitude": "0 0 0",
    "start.velocity": "0 0 0",
    "target.position": "6 0 2",
    "target.yaw": "0",
    "goal.offset": "0 0 4",
    "goal.pixel": "376 240",
    "vehicle.mass": "2.8",
    "vehicle.gravity": "0 0 -9.81",
    "vehicle.drag_coeff": "0.016",
    "vehicle.tau_roll": "0.18",
    "vehicle.tau_pitch": "0.18",
    "vehicle.gain_roll": "1.0",
    "vehicle.gain_pitch": "1.0",
    "vehicle.external_force": "0 0 0",
    "camera.fx": "455",
    "camera.fy": "455",
    "camera.cx": "376",
    "camera.cy": "240",
    "camera.width": "752",
    "camera.height": "480",
    "camera.position": "0.1 0 0",
    "camera.rotation": "0 0 1 -1 0 0 0 -1 0",
    "noise.sigma_pixel": "2.0",
    "noise.sigma_position": "0.05",
    "noise.sigma_yaw": "0.02",
    "plant.mass_offset": "0.03",
    "plant.drag_offset": "0.20",
    "weights.q_diag": "1 1 1 0.5 0.5 0.5 0.1 0.1 0.1",
    "weights.r_diag": "5 5 5 0.01",
    "weights.p_scale": "10",
    "weights.h_base": "2e-4",
    "bounds.u_min": "-0.6 -0.6 -2.0 0.0",
    "bounds.u_max": "0.6 0.6 2.0 54.936",
    "mpc.horizon": "20",
    "mpc.dt": "0.02",
    "mpc.max_iterations": "8",
    "observer.gain": "0.3",
    "observer.max_force": "10",
    "observer.enabled": "true",
    "sim.inner_dt": "0.001",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        values[key] = value
    return values


def load_config(path: str, overrides: Sequence[str] = ()) -> Dict[str, str]:
    with open(path) as f:
        file_values = parse_config_text(f.read(), source=path)
    cfg = dict(DEFAULT_CONFIG)
    for key, value in file_values.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value.strip()
    return cfg


def _floats(cfg: Dict[str, str], key: str, n: int) -> np.ndarray:
    parts = cfg[key].split()
    if len(parts) != n:
        raise ConfigError(f"{key} needs {n} values, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _float(cfg: Dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _int(cfg: Dict[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _bool(cfg: Dict[str, str], key: str) -> bool:
    value = cfg[key].lower()
    if value in ("true", "1", "yes", "on"):
        return True
    if value in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {cfg[key]!r}")


def build_intrinsics(cfg: Dict[str, str]) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=_float(cfg, "camera.fx"),
        fy=_float(cfg, "camera.fy"),
        cx=_float(cfg, "camera.cx"),
        cy=_float(cfg, "camera.cy"),
        width=_int(cfg, "camera.width"),
        height=_int(cfg, "camera.height"),
    )


def build_weights(cfg: Dict[str, str], intr: CameraIntrinsics) -> CostWeights:
    q = np.diag(_floats(cfg, "weights.q_diag", 9))
    r = np.diag(_floats(cfg, "weights.r_diag", 4))
    p = _float(cfg, "weights.p_scale") * q
    h = build_pixel_weight(intr, _float(cfg, "weights.h_base"))
    return CostWeights(Q=q, R=r, H=h, P=p)


def build_scenario(cfg: Dict[str, str]) -> Scenario:
    intr = build_intrinsics(cfg)
    att = _floats(cfg, "start.attitude", 3)
    vehicle = VehicleParams(
        mass=_float(cfg, "vehicle.mass"),
        gravity=_floats(cfg, "vehicle.gravity", 3),
        drag_coeff=_float(cfg, "vehicle.drag_coeff"),
        tau_roll=_float(cfg, "vehicle.tau_roll"),
        tau_pitch=_float(cfg, "vehicle.tau_pitch"),
        gain_roll=_float(cfg, "vehicle.gain_roll"),
        gain_pitch=_float(cfg, "vehicle.gain_pitch"),
        external_force=_floats(cfg, "vehicle.external_force", 3),
    )
    return Scenario(
        x_init=UavState(
            _floats(cfg, "start.position", 3),
            EulerAngles(att[0], att[1], att[2]),
            _floats(cfg, "start.velocity", 3),
        ),
        target_pose_world=Pose(
            _floats(cfg, "target.position", 3),
            EulerAngles(0.0, 0.0, _float(cfg, "target.yaw")),
        ),
        goal_spec=GoalSpec(
            desired_offset=_floats(cfg, "goal.offset", 3),
            desired_pixel=_floats(cfg, "goal.pixel", 2),
        ),
        tf=_float(cfg, "scenario.tf"),
        n_steps=_int(cfg, "scenario.n_steps"),
        vehicle=vehicle,
        intrinsics=intr,
        extrinsics=CameraExtrinsics(
            translation=_floats(cfg, "camera.position", 3),
            rotation=_floats(cfg, "camera.rotation", 9).reshape(3, 3),
        ),
        noise=DetectorNoise(
            sigma_pixel=_float(cfg, "noise.sigma_pixel"),
            sigma_position=_float(cfg, "noise.sigma_position"),
            sigma_yaw=_float(cfg, "noise.sigma_yaw"),
            seed=_int(cfg, "scenario.seed"),
        ),
        weights=build_weights(cfg, intr),
        u_min=_floats(cfg, "bounds.u_min", 4),
        u_max=_floats(cfg, "bounds.u_max", 4),
        plant_mass_offset=_float(cfg, "plant.mass_offset"),
        plant_drag_offset=_float(cfg, "plant.drag_offset"),
        seed=_int(cfg, "scenario.seed"),
        settle_time=_float(cfg, "scenario.settle_time"),
        inner_dt=_float(cfg, "sim.inner_dt"),
    )


def build_mpc_config(cfg: Dict[str, str]) -> MpcConfig:
    intr = build_intrinsics(cfg)
    u_min = _floats(cfg, "bounds.u_min", 4)
    u_max = _floats(cfg, "bounds.u_max", 4)
    return MpcConfig(
        horizon=_int(cfg, "mpc.horizon"),
        dt=_float(cfg, "mpc.dt"),
        weights=build_weights(cfg, intr),
        u_min=ControlInput.from_vector(u_min),
        u_max=ControlInput.from_vector(u_max),
        max_sqp_iterations=_int(cfg, "mpc.max_iterations"),
        observer_gain=_float(cfg, "observer.gain"),
        observer_max_force=_float(cfg, "observer.max_force"),
        observer_enabled=_bool(cfg, "observer.enabled"),
    )


def _load_or_fail(args) -> Dict[str, str]:
    if not os.path.isfile(args.scenario):
        raise FileNotFoundError(f"scenario file not found: {args.scenario}")
    cfg = load_config(args.scenario, args.set or [])
    if args.seed is not None:
        cfg["scenario.seed"] = str(args.seed)
    return cfg


def _in_view_fraction(traj: Trajectory, scenario: Scenario) -> float:
    count = 0
    for k in range(traj.states.shape[0]):
        err = reprojection_error(
            traj.state(k),
            scenario.target_pose_world.position,
            scenario.goal_spec.desired_pixel,
            scenario.intrinsics,
            scenario.extrinsics,
        )
        if err is None:
            continue
        pix = err + scenario.goal_spec.desired_pixel
        if 0 <= pix[0] < scenario.intrinsics.width and 0 <= pix[1] < scenario.intrinsics.height:
            count += 1
    return count / traj.states.shape[0]


def cmd_plan(args) -> int:
    cfg = _load_or_fail(args)
    scenario = build_scenario(cfg)
    mpc_cfg = build_mpc_config(cfg)
    if args.tf is not None:
        from dataclasses import replace
        scenario = replace(scenario, tf=args.tf)

    traj, x_goal, report = plan_trajectory(scenario, METHOD_OVS, mpc_cfg)
    if report is not None and not report.converged:
        print(f"planning failed: {report.status}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "trajectory.csv")
    save_trajectory_csv(traj, out_path)

    dist = float(np.linalg.norm(x_goal.position - scenario.x_init.position))
    print(f"goal position: {x_goal.position[0]:.3f} {x_goal.position[1]:.3f} {x_goal.position[2]:.3f}")
    print(f"s_nom: {dist / scenario.tf:.3f} m/s over tf={scenario.tf:.3g} s")
    if report is not None:
        print(f"cost: {report.final_cost:.6g}")
        print(f"iterations: {report.iterations}")
        print(f"max defect: {report.max_dynamics_defect:.3g}")
    print(f"in-view fraction at knots: {_in_view_fraction(traj, scenario):.3f}")
    print(f"wrote {out_path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_or_fail(args)
    if args.trials < 1:
        raise ConfigError("trials must be at least 1")
    scenario = build_scenario(cfg)
    mpc_cfg = build_mpc_config(cfg)
    tf_list = [float(v) for v in args.tf_list.split(",") if v.strip()]
    if not tf_list:
        raise ConfigError("empty --tf-list")
    methods = {
        "ovs": [METHOD_OVS],
        "pbvs": [METHOD_PBVS],
        "both": [METHOD_OVS, METHOD_PBVS],
    }[args.method]

    os.makedirs(args.out, exist_ok=True)
    failed = 0
    try:
        rows = sweep_nominal_speeds(scenario, tf_list, methods, args.trials, mpc_cfg,
                                    workers=args.jobs)
    except (PlanningFailure, TargetLostAtStart, InfeasibleStart) as exc:
        print(f"sweep failed: {exc}", file=sys.stderr)
        return 2

    comparison = os.path.join(args.out, "comparison.csv")
    write_comparison_csv(rows, comparison)

    long_path = os.path.join(args.out, "comparison_long.csv")
    with open(long_path, "w") as f:
        f.write("tf,s_nom,method,trial,metric,value,status\n")
        for row in rows:
            for trial, stats in enumerate(row.trial_stats):
                for metric, value in (
                    ("avg_px_err", stats.avg_pixel_error),
                    ("max_px_err", stats.max_pixel_error),
                    ("visibility", stats.visibility_fraction),
                    ("rms_thrust_N", stats.rms_thrust_n),
                    ("rms_roll_deg", stats.rms_roll_deg),
                    ("rms_pitch_deg", stats.rms_pitch_deg),
                    ("rms_yawrate", stats.rms_yaw_rate),
                ):
                    f.write(
                        f"{row.tf:.9g},{row.s_nom:.9g},{row.method},{trial},"
                        f"{metric},{value:.9g},ok\n"
                    )
    print(f"wrote {comparison}")
    print(f"wrote {long_path}")
    return 0 if failed == 0 else 2


def cmd_replay(args) -> int:
    cfg = _load_or_fail(args)
    scenario = build_scenario(cfg)
    if not os.path.isfile(args.episode):
        raise FileNotFoundError(f"episode file not found: {args.episode}")

    rows = []
    with open(args.episode) as f:
        header = f.readline().strip()
        expected_cols = len(header.split(","))
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != expected_cols:
                print(f"{args.episode}:{lineno}: expected {expected_cols} columns, "
                      f"got {len(parts)}", file=sys.stderr)
                return 1
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                print(f"{args.episode}:{lineno}: non-numeric value", file=sys.stderr)
                return 1
    if not rows:
        print(f"{args.episode}: no data rows", file=sys.stderr)
        return 1

    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "pixel_errors.csv")
    with open(out_path, "w") as f:
        f.write("t,err_u,err_v,err_norm\n")
        for row in rows:
            state = UavState.from_vector(np.array(row[1:10]))
            err = reprojection_error(
                state,
                scenario.target_pose_world.position,
                scenario.goal_spec.desired_pixel,
                scenario.intrinsics,
                scenario.extrinsics,
            )
            if err is None:
                f.write(f"{row[0]:.12g},nan,nan,nan\n")
            else:
                norm = float(np.hypot(err[0], err[1]))
                f.write(f"{row[0]:.12g},{err[0]:.12g},{err[1]:.12g},{norm:.12g}\n")
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovsnav",
        description="Target-aware trajectory planning and tracking experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value")

    p_plan = sub.add_parser("plan", help="solve the global trajectory and save it")
    common(p_plan)
    p_plan.add_argument("--tf", type=float, default=None, help="override flight time")
    p_plan.set_defaults(func=cmd_plan)

    p_cmp = sub.add_parser("compare", help="run the flight-time sweep for both methods")
    common(p_cmp)
    p_cmp.add_argument("--method", choices=["ovs", "pbvs", "both"], default="both")
    p_cmp.add_argument("--tf-list", default="10.2,7.5,6.6,5.1")
    p_cmp.add_argument("--trials", type=int, default=10)
    p_cmp.add_argument("--jobs", type=int, default=1, help="parallel episode workers")
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("replay", help="recompute pixel-error series from an episode CSV")
    common(p_rep)
    p_rep.add_argument("--episode", required=True, help="episode CSV to replay")
    p_rep.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PlanningFailure, TargetLostAtStart, InfeasibleStart) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
