#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command line entry point: simulate, run, eval, bench and dump-config."""

import argparse
import logging
import pathlib
import sys
import typing

import numpy as np
import yaml

import run_config
import sensor_logs
from constants import (
    EXIT_ESTIMATOR_FAILURE,
    EXIT_INPUT_ERROR,
    EXIT_OK,
    SIM_CONFIG_FILE,
    SIM_GROUND_TRUTH_FILE,
    SIM_IMU_FILE,
    SIM_LIDAR_FILE,
)
from evaluation import evaluate_ape, position_errors
from exceptions import EstimatorError, InputError
from odometry import run_odometry
from run_config import RunConfig
from simulator import simulate_scene

logger = logging.getLogger(__name__)

KNOT_SWEEP = (20.0, 50.0, 100.0)
BATCH_SWEEP = (0.0025, 0.005, 0.01)


def _config(args: argparse.Namespace, **changes: typing.Any) -> RunConfig:
    """Load the configuration and apply command line overrides."""
    config = run_config.load_config(args.config, args.profile)
    if getattr(args, "seed", None) is not None:
        changes.setdefault("seed", args.seed)
    if getattr(args, "mode", None) is not None:
        changes.setdefault("mode", args.mode)
    if not changes:
        return config
    values = config.dict()
    for key, value in changes.items():
        if isinstance(value, dict):
            values[key].update(value)
        else:
            values[key] = value
    return run_config.from_mapping(values, args.profile)


def simulate(args: argparse.Namespace) -> None:
    """Write a simulated sequence and its run configuration."""
    scene = simulate_scene(_config(args))
    out: pathlib.Path = args.out
    for sensor_id, points in enumerate(scene.lidar):
        sensor_logs.write_lidar(out / SIM_LIDAR_FILE.format(sensor_id=sensor_id), points)
    sensor_logs.write_imu(out / SIM_IMU_FILE, scene.imu)
    sensor_logs.write_trajectory(out / SIM_GROUND_TRUTH_FILE, scene.ground_truth)
    (out / SIM_CONFIG_FILE).write_text(run_config.dump_config(scene.config), encoding="utf-8")
    print(f"wrote {len(scene.lidar)} lidar streams, imu and ground truth to {out}")


def run(args: argparse.Namespace) -> None:
    """Run the odometry on logged streams."""
    config = _config(args)
    lidar = [
        sensor_logs.read_lidar(path, sensor_id=sensor_id)
        for sensor_id, path in enumerate(args.lidar)
    ]
    imu = sensor_logs.read_imu(args.imu) if args.imu is not None else None
    trajectory, report = run_odometry(config, lidar, imu, keep_map=args.map is not None)
    sensor_logs.write_trajectory(args.out, trajectory)
    if args.map is not None:
        sensor_logs.write_map(args.map, report.global_map)
    if args.gt is not None:
        gt = sensor_logs.read_trajectory(args.gt)
        report.ape_rmse = evaluate_ape(trajectory, gt, args.align)
    print(yaml.safe_dump(report.to_dict(), sort_keys=False), end="")


def evaluate(args: argparse.Namespace) -> None:
    """Print the APE RMSE of an estimated trajectory."""
    est = sensor_logs.read_trajectory(args.est)
    gt = sensor_logs.read_trajectory(args.gt)
    if args.errors is not None:
        t, errors = position_errors(est, gt, args.align)
        table = np.column_stack([t, errors, np.linalg.norm(errors, axis=-1)])
        np.savetxt(
            args.errors, table, fmt="%.9f", delimiter=",", header="t,ex,ey,ez,norm", comments=""
        )
    print(f"{evaluate_ape(est, gt, args.align):.6f}")


def bench(args: argparse.Namespace) -> None:
    """Run the knot-frequency and batch-span sweeps on simulated sequences."""
    sweeps = {"knot": KNOT_SWEEP, "batch": BATCH_SWEEP}
    selected = sweeps if args.sweep == "all" else {args.sweep: sweeps[args.sweep]}
    base = _config(args)
    print("sweep,value,seed,ape_rmse,xi")
    for sweep, values in selected.items():
        for value in values:
            for seed in range(base.seed, base.seed + args.seeds):
                changes: dict[str, typing.Any] = {
                    "seed": seed,
                    "simulator": {"duration": args.duration, "dynamics": args.dynamics},
                }
                changes["knot_frequency" if sweep == "knot" else "batch_span"] = value
                config = _config(args, **changes)
                scene = simulate_scene(config)
                trajectory, report = run_odometry(
                    scene.config, scene.lidar, scene.imu if config.uses_imu else None
                )
                ape = evaluate_ape(trajectory, scene.ground_truth)
                print(f"{sweep},{value:g},{seed},{ape:.6f},{report.runtime()['xi']:.4f}")


def dump_config(args: argparse.Namespace) -> None:
    """Print the complete configuration."""
    print(run_config.dump_config(_config(args)), end="")


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    """Options shared by every subcommand."""
    parser.add_argument("--config", type=pathlib.Path, help="YAML run configuration")
    parser.add_argument("--profile", choices=sorted(run_config.PROFILES), default="indoor")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--mode", choices=["LO", "LIO", "MLO", "MLIO"], help="sensor setup")


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser.

    Returns:
        The parser; every subcommand stores its handler in ``handler``.
    """
    parser = argparse.ArgumentParser(
        prog="resple", description="Recursive spline LiDAR(-inertial) odometry"
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    sim_parser = subparsers.add_parser("simulate", help="write a simulated sequence")
    _add_config_options(sim_parser)
    sim_parser.add_argument("--out", type=pathlib.Path, required=True, help="output directory")
    sim_parser.set_defaults(handler=simulate)

    run_parser = subparsers.add_parser("run", help="run the odometry on logged streams")
    _add_config_options(run_parser)
    run_parser.add_argument("--lidar", type=pathlib.Path, action="append", required=True)
    run_parser.add_argument("--imu", type=pathlib.Path)
    run_parser.add_argument("--gt", type=pathlib.Path, help="ground truth to evaluate against")
    run_parser.add_argument("--align", choices=["none", "se3"], default="none")
    run_parser.add_argument("--out", type=pathlib.Path, required=True, help="trajectory log")
    run_parser.add_argument("--map", type=pathlib.Path, help="global map output")
    run_parser.set_defaults(handler=run)

    eval_parser = subparsers.add_parser("eval", help="absolute position error of a trajectory")
    eval_parser.add_argument("--est", type=pathlib.Path, required=True)
    eval_parser.add_argument("--gt", type=pathlib.Path, required=True)
    eval_parser.add_argument("--align", choices=["none", "se3"], default="none")
    eval_parser.add_argument("--errors", type=pathlib.Path, help="per-pose error CSV output")
    eval_parser.set_defaults(handler=evaluate)

    bench_parser = subparsers.add_parser("bench", help="parameter sweeps on simulated data")
    _add_config_options(bench_parser)
    bench_parser.add_argument("--sweep", choices=["knot", "batch", "all"], default="all")
    bench_parser.add_argument("--seeds", type=int, default=3)
    bench_parser.add_argument("--duration", type=float, default=10.0)
    bench_parser.add_argument("--dynamics", choices=["low", "high"], default="high")
    bench_parser.set_defaults(handler=bench)

    dump_parser = subparsers.add_parser("dump-config", help="print the complete configuration")
    _add_config_options(dump_parser)
    dump_parser.set_defaults(handler=dump_config)
    return parser


def main(argv: typing.Sequence[str] | None = None) -> int:
    """Run the command line.

    Args:
        argv: the arguments, ``sys.argv[1:]`` when unset.

    Returns:
        The exit code: 0 on success, 1 for input errors, 2 for estimator failures.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    try:
        args.handler(args)
    except InputError as exc:
        print(f"error: {exc.msg}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except EstimatorError as exc:
        print(f"estimator failure: {exc.msg}", file=sys.stderr)
        return EXIT_ESTIMATOR_FAILURE
    return EXIT_OK


if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
