# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Unit tests for the sensor and trajectory logs."""

import pathlib

import numpy as np
import pytest

import sensor_logs
import so3_quat
from exceptions import LogParseError
from resple_types import ImuSamples, LidarPoints, Trajectory
from tests.unit.conftest import random_unit_quaternion


def _write(path: pathlib.Path, content: str) -> pathlib.Path:
    """Write a log file and return its path."""
    path.write_text(content, encoding="utf-8")
    return path


def test_lidar_round_trip(tmp_path: pathlib.Path, rng: np.random.Generator) -> None:
    """
    arrange: LiDAR points of two sensors.
    act: write and read them back.
    assert: the points are restored.
    """
    points = LidarPoints(
        t=np.sort(rng.uniform(0.0, 1.0, 50)),
        xyz=rng.uniform(-20.0, 20.0, (50, 3)),
        sensor_id=rng.integers(0, 2, 50),
    )
    path = tmp_path / "logs" / "lidar.txt"

    sensor_logs.write_lidar(path, points)
    loaded = sensor_logs.read_lidar(path)

    np.testing.assert_allclose(loaded.t, points.t, atol=1e-9)
    np.testing.assert_allclose(loaded.xyz, points.xyz, atol=1e-12)
    np.testing.assert_array_equal(loaded.sensor_id, points.sensor_id)


def test_read_lidar_sorts_and_overrides_sensor(tmp_path: pathlib.Path) -> None:
    """
    arrange: a LiDAR log with comments, blank lines and unsorted timestamps.
    act: read it with a sensor id override.
    assert: points are sorted and carry the override id.
    """
    path = _write(
        tmp_path / "lidar.txt",
        "# t x y z sensor_id\n0.2 1 2 3 0\n\n0.1 4 5 6 0\n",
    )

    points = sensor_logs.read_lidar(path, sensor_id=1)

    np.testing.assert_array_equal(points.t, [0.1, 0.2])
    np.testing.assert_array_equal(points.xyz[0], [4.0, 5.0, 6.0])
    np.testing.assert_array_equal(points.sensor_id, [1, 1])


def test_imu_round_trip(tmp_path: pathlib.Path, rng: np.random.Generator) -> None:
    """
    arrange: IMU samples.
    act: write and read them back.
    assert: the samples are restored.
    """
    samples = ImuSamples(
        t=np.arange(20) / 400.0, acc=rng.normal(size=(20, 3)), gyro=rng.normal(size=(20, 3))
    )
    path = tmp_path / "imu.txt"

    sensor_logs.write_imu(path, samples)
    loaded = sensor_logs.read_imu(path)

    np.testing.assert_allclose(loaded.t, samples.t, atol=1e-9)
    np.testing.assert_allclose(loaded.acc, samples.acc, atol=1e-12)
    np.testing.assert_allclose(loaded.gyro, samples.gyro, atol=1e-12)


def test_trajectory_round_trip(tmp_path: pathlib.Path, rng: np.random.Generator) -> None:
    """
    arrange: a trajectory with random orientations.
    act: write and read it back.
    assert: the trajectory is restored.
    """
    trajectory = Trajectory(
        t=np.arange(10) * 0.01,
        position=rng.uniform(-5.0, 5.0, (10, 3)),
        orientation=random_unit_quaternion(rng, 10),
    )
    path = tmp_path / "trajectory.txt"

    sensor_logs.write_trajectory(path, trajectory)
    loaded = sensor_logs.read_trajectory(path)

    np.testing.assert_allclose(loaded.t, trajectory.t, atol=1e-9)
    np.testing.assert_allclose(loaded.position, trajectory.position, atol=1e-12)
    np.testing.assert_allclose(loaded.orientation, trajectory.orientation, atol=1e-11)


def test_trajectory_quaternion_is_w_last_on_disk(tmp_path: pathlib.Path) -> None:
    """
    arrange: a trajectory log holding a scaled yaw quaternion in qx qy qz qw order.
    act: read it.
    assert: the orientation is w-first in memory and normalized.
    """
    path = _write(tmp_path / "trajectory.txt", "0.0 1 2 3 0 0 2 2\n0.1 1 2 3 0 0 0 1\n")

    trajectory = sensor_logs.read_trajectory(path)

    np.testing.assert_allclose(
        trajectory.orientation[0], so3_quat.exp_at_identity([0.0, 0.0, np.pi / 2.0])
    )
    np.testing.assert_array_equal(trajectory.orientation[1], so3_quat.IDENTITY)
    out = tmp_path / "out.txt"
    sensor_logs.write_trajectory(out, trajectory)
    lines = [line for line in out.read_text(encoding="utf-8").splitlines() if line[0] != "#"]
    assert lines[1].split()[4:] == ["0.000000000000"] * 3 + ["1.000000000000"]


@pytest.mark.parametrize(
    "content, line",
    [
        pytest.param("0.0 1 2 3 0 0 0 1\n0.0 1 2 3 0 0 0 1\n", 2, id="repeated timestamp"),
        pytest.param("# header\n0.1 1 2 3 0 0 0 1\n0.0 1 2 3 0 0 0 1\n", 3, id="backwards"),
        pytest.param("0.0 1 2 3 0 0 0 0\n", 1, id="zero quaternion"),
        pytest.param("0.0 1 2 3 0 0 0 1\n0.1 1 2 three 0 0 0 1\n", 2, id="malformed number"),
        pytest.param("0.0 1 2 3 0 0 0 1\n\n0.1 1 2 3 0 0 1\n", 3, id="missing column"),
        pytest.param("nan 1 2 3 0 0 0 1\n", 1, id="non-finite timestamp"),
    ],
)
def test_read_trajectory_errors(tmp_path: pathlib.Path, content: str, line: int) -> None:
    """
    arrange: a malformed trajectory log.
    act: read it.
    assert: LogParseError names the offending line.
    """
    path = _write(tmp_path / "trajectory.txt", content)

    with pytest.raises(LogParseError) as exc_info:
        sensor_logs.read_trajectory(path)

    assert exc_info.value.line == line
    assert exc_info.value.path == str(path)


@pytest.mark.parametrize(
    "content, line",
    [
        pytest.param("0.0 1 2 3 0\n0.1 1 2 3 0.5\n", 2, id="fractional sensor id"),
        pytest.param("0.0 1 2 3 -1\n", 1, id="negative sensor id"),
        pytest.param("0.0 1 2 3\n", 1, id="missing sensor id"),
    ],
)
def test_read_lidar_errors(tmp_path: pathlib.Path, content: str, line: int) -> None:
    """
    arrange: a malformed LiDAR log.
    act: read it.
    assert: LogParseError names the offending line.
    """
    path = _write(tmp_path / "lidar.txt", content)

    with pytest.raises(LogParseError) as exc_info:
        sensor_logs.read_lidar(path)

    assert exc_info.value.line == line


def test_read_missing_log(tmp_path: pathlib.Path) -> None:
    """
    arrange: a path that does not exist.
    act: read it as an IMU log.
    assert: LogParseError is raised.
    """
    with pytest.raises(LogParseError) as exc_info:
        sensor_logs.read_imu(tmp_path / "missing.txt")

    assert exc_info.value.line == 0


def test_read_empty_log(tmp_path: pathlib.Path) -> None:
    """
    arrange: a log with only a header.
    act: read it.
    assert: no samples are returned.
    """
    path = _write(tmp_path / "imu.txt", "# t ax ay az gx gy gz\n")

    assert len(sensor_logs.read_imu(path)) == 0


def test_write_map(tmp_path: pathlib.Path) -> None:
    """
    arrange: two map points.
    act: write them.
    assert: the file holds one x y z line per point.
    """
    path = tmp_path / "map.txt"

    sensor_logs.write_map(path, [[1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]])

    rows = np.loadtxt(path, ndmin=2)
    np.testing.assert_allclose(rows, [[1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]])
