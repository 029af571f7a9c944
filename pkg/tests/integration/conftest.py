# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Fixtures for the simulated end-to-end odometry tests."""

import logging
import typing

import numpy as np
import pytest
from pytest import Config

import run_config
from evaluation import evaluate_ape
from odometry import RunReport, run_odometry
from resple_types import Trajectory
from simulator import Scene, simulate_scene

logger = logging.getLogger(__name__)

REALISTIC_IMU = {
    "imu_sigma_acc": 0.05,
    "imu_sigma_gyro": 0.005,
    "bias_acc": (0.05, -0.03, 0.02),
    "bias_gyro": (0.002, -0.001, 0.003),
}


class SimulatedRun(typing.NamedTuple):
    """An odometry run on a simulated scene.

    Attrs:
        scene: the simulated scene.
        trajectory: the estimated trajectory.
        report: the run report.
        ape: APE RMSE against the ground truth in meters.
    """

    scene: Scene
    trajectory: Trajectory
    report: RunReport
    ape: float


def run_simulated(values: dict, keep_map: bool = False) -> SimulatedRun:
    """Simulate a scene from configuration values and run the odometry on it.

    Args:
        values: the configuration values.
        keep_map: keep the global map in the report.

    Returns:
        The run and its APE.
    """
    scene = simulate_scene(run_config.from_mapping(values))
    imu = scene.imu if scene.config.uses_imu else None
    trajectory, report = run_odometry(scene.config, scene.lidar, imu, keep_map=keep_map)
    ape = evaluate_ape(trajectory, scene.ground_truth)
    logger.info(
        "%s seed %d at %.0f hz knots: ape %.4f m, xi %.3f",
        scene.config.mode,
        scene.config.seed,
        scene.config.knot_frequency,
        ape,
        report.runtime()["xi"],
    )
    return SimulatedRun(scene, trajectory, report, ape)


def outlier_labels(scene: Scene, report: RunReport) -> np.ndarray:
    """Gross-outlier label of every LiDAR point the updates processed."""
    labels = np.zeros(report.point_t.size, dtype=bool)
    for sensor_id, (points, outliers) in enumerate(zip(scene.lidar, scene.outliers)):
        mine = report.point_sensor == sensor_id
        index = np.searchsorted(points.t, report.point_t[mine])
        labels[mine] = outliers[index]
    return labels


@pytest.fixture(scope="module", name="duration_scale")
def fixture_duration_scale(pytestconfig: Config) -> float:
    """Return the --duration-scale test parameter."""
    scale = pytestconfig.getoption("--duration-scale")
    if not scale > 0.0:
        raise ValueError("--duration-scale must be positive")
    return scale


@pytest.fixture(scope="module", name="seeds")
def fixture_seeds(pytestconfig: Config) -> int:
    """Return the --seeds test parameter."""
    seeds = pytestconfig.getoption("--seeds")
    if seeds < 1:
        raise ValueError("--seeds must be at least 1")
    return seeds
