# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Line-delimited text logs for LiDAR points, IMU samples, trajectories and maps.

Formats, one record per line, ``#`` starting a comment line:

* LiDAR: ``t x y z sensor_id`` in seconds and meters, sensor frame.
* IMU: ``t ax ay az gx gy gz`` in seconds, m/s² and rad/s.
* Trajectory: ``t x y z qx qy qz qw``; quaternions are w-last on disk and
  w-first in memory.
* Map: ``x y z`` in meters, world frame.
"""

import logging
import pathlib

import numpy as np
import numpy.typing as npt

import so3_quat
from constants import IMU_LOG_COLUMNS, LIDAR_LOG_COLUMNS, TRAJECTORY_LOG_COLUMNS
from exceptions import LogParseError
from resple_types import ImuSamples, LidarPoints, Trajectory

logger = logging.getLogger(__name__)

TIME_FORMAT = "%.9f"
VALUE_FORMAT = "%.12f"


def _read_records(path: pathlib.Path, columns: int) -> tuple[npt.NDArray[np.float64], list[int]]:
    """Parse a log into a float table.

    Args:
        path: the log file.
        columns: the number of columns of every record.

    Returns:
        The table of shape (m, columns) and the 1-based line number of every row.

    Raises:
        LogParseError: if the file cannot be read or a record is malformed.
    """
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise LogParseError(f"cannot read log: {exc}", str(path), 0) from exc
    numbers = [
        number
        for number, line in enumerate(lines, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not numbers:
        return np.zeros((0, columns)), []
    records = [lines[number - 1] for number in numbers]
    try:
        table = np.loadtxt(records, dtype=float, ndmin=2)
    except ValueError:
        table = None
    if table is None or table.shape[1] != columns:
        for number, record in zip(numbers, records):
            try:
                values = np.asarray(record.split(), dtype=float)
            except ValueError as exc:
                raise LogParseError(f"malformed number: {exc}", str(path), number) from exc
            if values.size != columns:
                raise LogParseError(
                    f"expected {columns} columns, found {values.size}", str(path), number
                )
        raise LogParseError("malformed log", str(path), numbers[0])
    return table, numbers


def _require_finite_times(
    path: pathlib.Path, t: npt.NDArray[np.float64], numbers: list[int]
) -> None:
    """Reject records whose timestamp is not finite."""
    bad = np.flatnonzero(~np.isfinite(t))
    if bad.size:
        raise LogParseError("timestamp is not finite", str(path), numbers[bad[0]])


def read_lidar(path: pathlib.Path, sensor_id: int | None = None) -> LidarPoints:
    """Read a LiDAR log.

    Args:
        path: the log file.
        sensor_id: overrides the sensor id column when set.

    Returns:
        The points, sorted by time.

    Raises:
        LogParseError: if a record is malformed.
    """
    table, numbers = _read_records(path, LIDAR_LOG_COLUMNS)
    _require_finite_times(path, table[:, 0], numbers)
    ids = table[:, 4]
    bad = np.flatnonzero((ids != np.round(ids)) | (ids < 0))
    if bad.size:
        raise LogParseError("sensor id must be a non-negative integer", str(path), numbers[bad[0]])
    points = LidarPoints(
        t=table[:, 0].copy(),
        xyz=table[:, 1:4].copy(),
        sensor_id=(
            ids.astype(np.int64)
            if sensor_id is None
            else np.full(len(table), sensor_id, dtype=np.int64)
        ),
    )
    logger.debug("read %d lidar points from %s", len(points), path)
    return points.take(np.argsort(points.t, kind="stable"))


def read_imu(path: pathlib.Path) -> ImuSamples:
    """Read an IMU log.

    Args:
        path: the log file.

    Returns:
        The samples, sorted by time.

    Raises:
        LogParseError: if a record is malformed.
    """
    table, numbers = _read_records(path, IMU_LOG_COLUMNS)
    _require_finite_times(path, table[:, 0], numbers)
    samples = ImuSamples(t=table[:, 0].copy(), acc=table[:, 1:4].copy(), gyro=table[:, 4:7].copy())
    logger.debug("read %d imu samples from %s", len(samples), path)
    return samples.take(np.argsort(samples.t, kind="stable"))


def read_trajectory(path: pathlib.Path) -> Trajectory:
    """Read a trajectory log.

    Args:
        path: the log file.

    Returns:
        The trajectory with w-first unit quaternions.

    Raises:
        LogParseError: if a record is malformed, timestamps do not increase or a
            quaternion is zero.
    """
    table, numbers = _read_records(path, TRAJECTORY_LOG_COLUMNS)
    _require_finite_times(path, table[:, 0], numbers)
    backward = np.flatnonzero(np.diff(table[:, 0]) <= 0.0)
    if backward.size:
        raise LogParseError(
            "timestamps must strictly increase", str(path), numbers[backward[0] + 1]
        )
    quaternions = table[:, [7, 4, 5, 6]]
    norms = np.linalg.norm(quaternions, axis=-1)
    bad = np.flatnonzero(~(norms > 0.0) | ~np.isfinite(norms))
    if bad.size:
        raise LogParseError("quaternion must be finite and non-zero", str(path), numbers[bad[0]])
    return Trajectory(
        t=table[:, 0].copy(),
        position=table[:, 1:4].copy(),
        orientation=so3_quat.normalize(quaternions) if len(table) else np.zeros((0, 4)),
    )


def _write(
    path: pathlib.Path, table: npt.NDArray[np.float64], fmt: list[str], header: str
) -> None:
    """Write a table with per-column formats and a comment header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=fmt, header=header, comments="# ")


def write_lidar(path: pathlib.Path, points: LidarPoints) -> None:
    """Write LiDAR points as ``t x y z sensor_id`` lines."""
    table = np.column_stack([points.t, points.xyz, points.sensor_id])
    _write(path, table, [TIME_FORMAT] + [VALUE_FORMAT] * 3 + ["%d"], "t x y z sensor_id")


def write_imu(path: pathlib.Path, samples: ImuSamples) -> None:
    """Write IMU samples as ``t ax ay az gx gy gz`` lines."""
    table = np.column_stack([samples.t, samples.acc, samples.gyro])
    _write(path, table, [TIME_FORMAT] + [VALUE_FORMAT] * 6, "t ax ay az gx gy gz")


def write_trajectory(path: pathlib.Path, trajectory: Trajectory) -> None:
    """Write a trajectory as ``t x y z qx qy qz qw`` lines."""
    table = np.column_stack(
        [trajectory.t, trajectory.position, trajectory.orientation[:, [1, 2, 3, 0]]]
    )
    _write(path, table, [TIME_FORMAT] + [VALUE_FORMAT] * 7, "t x y z qx qy qz qw")


def write_map(path: pathlib.Path, points: npt.ArrayLike) -> None:
    """Write world-frame map points as ``x y z`` lines."""
    table = np.asarray(points, dtype=float).reshape(-1, 3)
    _write(path, table, ["%.6f"] * 3, "x y z")
