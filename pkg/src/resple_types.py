# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Type definitions shared by the odometry modules.

Measurement containers are columnar: one array per field, sorted by timestamp,
so every pipeline stage works on whole batches at once.
"""

import dataclasses
import typing

import numpy as np
import numpy.typing as npt


@dataclasses.dataclass(frozen=True)
class LidarPoints:
    """LiDAR points with exact per-point timestamps.

    Attrs:
        t: timestamps in seconds, shape (m,).
        xyz: coordinates in the sensor frame in meters, shape (m, 3).
        sensor_id: index of the LiDAR that produced each point, shape (m,).
    """

    t: npt.NDArray[np.float64]
    xyz: npt.NDArray[np.float64]
    sensor_id: npt.NDArray[np.int64]

    @classmethod
    def empty(cls) -> "LidarPoints":
        """Return a container without points."""
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    @classmethod
    def concatenate(cls, parts: typing.Sequence["LidarPoints"]) -> "LidarPoints":
        """Merge several containers and sort the result by timestamp."""
        if not parts:
            return cls.empty()
        merged = cls(
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.xyz for p in parts]).reshape(-1, 3),
            np.concatenate([p.sensor_id for p in parts]).astype(np.int64),
        )
        return merged.take(np.argsort(merged.t, kind="stable"))

    def take(self, index: npt.ArrayLike) -> "LidarPoints":
        """Select points by integer index or boolean mask."""
        return LidarPoints(self.t[index], self.xyz[index], self.sensor_id[index])

    def __len__(self) -> int:
        """Return the number of points."""
        return int(self.t.shape[0])


@dataclasses.dataclass(frozen=True)
class ImuSamples:
    """IMU readings in the body frame.

    Attrs:
        t: timestamps in seconds, shape (m,).
        acc: specific force in m/s², shape (m, 3).
        gyro: angular rate in rad/s, shape (m, 3).
    """

    t: npt.NDArray[np.float64]
    acc: npt.NDArray[np.float64]
    gyro: npt.NDArray[np.float64]

    @classmethod
    def empty(cls) -> "ImuSamples":
        """Return a container without samples."""
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))

    def take(self, index: npt.ArrayLike) -> "ImuSamples":
        """Select samples by integer index or boolean mask."""
        return ImuSamples(self.t[index], self.acc[index], self.gyro[index])

    def __len__(self) -> int:
        """Return the number of samples."""
        return int(self.t.shape[0])


@dataclasses.dataclass(frozen=True)
class ObservationBatch:
    """Measurements fused by one iterated update.

    Attrs:
        lidar: the LiDAR points of the batch.
        imu: the IMU samples of the batch.
    """

    lidar: LidarPoints
    imu: ImuSamples

    def __len__(self) -> int:
        """Return the number of measurements."""
        return len(self.lidar) + len(self.imu)

    @property
    def t_min(self) -> float:
        """Oldest timestamp of the batch."""
        return float(
            min(np.min(self.lidar.t, initial=np.inf), np.min(self.imu.t, initial=np.inf))
        )

    @property
    def t_max(self) -> float:
        """Newest timestamp of the batch."""
        return float(
            max(np.max(self.lidar.t, initial=-np.inf), np.max(self.imu.t, initial=-np.inf))
        )


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """Timestamped 6-DoF poses.

    Attrs:
        t: strictly increasing timestamps in seconds, shape (m,).
        position: positions in meters, shape (m, 3).
        orientation: unit quaternions, w-first, shape (m, 4).
    """

    t: npt.NDArray[np.float64]
    position: npt.NDArray[np.float64]
    orientation: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate timestamps and quaternions.

        Raises:
            ValueError: if timestamps are not strictly increasing or a quaternion is not unit.
        """
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if self.orientation.size and np.max(
            np.abs(np.linalg.norm(self.orientation, axis=-1) - 1.0)
        ) > 1e-6:
            raise ValueError("trajectory orientations must be unit quaternions")

    def __len__(self) -> int:
        """Return the number of poses."""
        return int(self.t.shape[0])


class RuntimeSummary(typing.TypedDict):
    """Per-batch processing time statistics.

    Attrs:
        xi: runtime efficiency, mean processing time over the batch span.
        mean: mean processing time in seconds.
        p50: median processing time in seconds.
        p95: 95th percentile processing time in seconds.
        max: largest processing time in seconds.
    """

    xi: float
    mean: float
    p50: float
    p95: float
    max: float
