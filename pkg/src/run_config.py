# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""This module defines the RunConfig model holding every tunable of an odometry run."""

import copy
import pathlib
import typing

import yaml

# pydantic is causing this no-name-in-module problem
from pydantic import (  # pylint: disable=no-name-in-module
    BaseModel,
    Extra,
    Field,
    ValidationError,
    root_validator,
    validator,
)

import so3_quat
from constants import OUTLIER_SIGMA_SCALE
from exceptions import ConfigInvalidError

Mode = typing.Literal["LO", "LIO", "MLO", "MLIO"]
Dynamics = typing.Literal["low", "high"]
Pattern = typing.Literal["spinning", "repetitive"]
Profile = typing.Literal["indoor", "outdoor"]

MAX_BATCH_KNOTS = 4

PROFILES: dict[str, dict[str, typing.Any]] = {
    "indoor": {},
    "outdoor": {"lidar": {"leaf_size": 0.5, "max_range": 150.0}},
}


class EstimatorConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """Process noise of the spline estimator.

    Attrs:
        sigma_position: std of a newly appended position control point in meters.
        sigma_delta: std of a newly appended orientation increment in radians.
        q_random_walk: variance added to every state component between knots.
    """

    sigma_position: float = Field(0.02, ge=0)
    sigma_delta: float = Field(0.01, ge=0)
    q_random_walk: float = Field(0.0, ge=0)


class LidarConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """LiDAR pre-processing, association, gating and mapping.

    Attrs:
        sigma: range noise std in meters.
        leaf_size: voxel downsampling leaf in meters.
        downsample_span: length of the point chunks downsampled together, in seconds.
        min_range: points closer to the sensor are dropped, in meters.
        max_range: points farther from the sensor are dropped, in meters.
        n_neighbors: map neighbors per plane fit.
        plane_rms_max: planes at least this rough are rejected, in meters.
        assoc_dist_max: planes whose farthest neighbor is at least this far are rejected.
        outlier_threshold: variance gate on the predicted innovation variance, in m²;
            unset, points are gated at five times the range noise std.
        residual_gate: innovation gate on the squared normalized innovation.
        reassociate: refresh plane associations at every update iteration.
        map_voxel_size: voxel edge of the map hash in meters.
        map_resolution: insertion de-duplication cell in meters, 0 disables it.
        map_init_span: the first points of this span seed the map, in seconds.
    """

    sigma: float = Field(0.02, gt=0)
    leaf_size: float = Field(0.25, gt=0)
    downsample_span: float = Field(0.1, gt=0)
    min_range: float = Field(0.5, ge=0)
    max_range: float = Field(100.0, gt=0)
    n_neighbors: int = Field(5, ge=3)
    plane_rms_max: float = Field(0.1, gt=0)
    assoc_dist_max: float = Field(2.0, gt=0)
    outlier_threshold: float | None = Field(None, gt=0)
    residual_gate: float = Field(25.0, gt=0)
    reassociate: bool = True
    map_voxel_size: float = Field(1.0, gt=0)
    map_resolution: float = Field(0.1, ge=0)
    map_init_span: float = Field(0.1, gt=0)

    @root_validator(skip_on_failure=True)
    @classmethod
    def check_ranges(cls, values: dict) -> dict:
        """Check the range limits are ordered.

        Args:
            values: the field values.

        Returns:
            The field values.

        Raises:
            ValueError: if min_range is not below max_range.
        """
        if values["min_range"] >= values["max_range"]:
            raise ValueError("min_range must be below max_range")
        return values

    @property
    def variance_threshold(self) -> float:
        """Return the variance gate threshold in m²."""
        if self.outlier_threshold is not None:
            return self.outlier_threshold
        return (OUTLIER_SIGMA_SCALE * self.sigma) ** 2


class ImuConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """IMU noise and gravity.

    Attrs:
        sigma_acc: accelerometer noise std in m/s².
        sigma_gyro: gyroscope noise std in rad/s.
        sigma_bias_acc: accelerometer bias random walk in m/s²/√s, 0 keeps it constant.
        sigma_bias_gyro: gyroscope bias random walk in rad/s/√s, 0 keeps it constant.
        gravity_magnitude: gravity in m/s².
        align_duration: the quasi-static interval used for gravity alignment, in seconds.
        align_tolerance: accepted deviation of the mean specific force from gravity.
    """

    sigma_acc: float = Field(0.05, gt=0)
    sigma_gyro: float = Field(0.005, gt=0)
    sigma_bias_acc: float = Field(0.001, ge=0)
    sigma_bias_gyro: float = Field(0.0001, ge=0)
    gravity_magnitude: float = Field(9.81, gt=0)
    align_duration: float = Field(0.5, gt=0)
    align_tolerance: float = Field(0.5, gt=0)


class InitConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """Initial belief of the estimator.

    Attrs:
        position: initial position in meters.
        orientation: initial unit quaternion, w-first; unset means gravity alignment
            with an IMU and identity without.
        start_time: time opening the first active segment; unset means the first
            measurement after the map seeding span.
        rcp_positions: explicit position control points, four rows.
        rcp_deltas: explicit orientation increments, four rows.
        sigma_position: initial position std in meters.
        sigma_delta: initial increment std in radians.
        sigma_bias_acc: initial accelerometer bias std in m/s².
        sigma_bias_gyro: initial gyroscope bias std in rad/s.
    """

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] | None = None
    start_time: float | None = None
    rcp_positions: list[tuple[float, float, float]] | None = None
    rcp_deltas: list[tuple[float, float, float]] | None = None
    sigma_position: float = Field(0.01, gt=0)
    sigma_delta: float = Field(0.01, gt=0)
    sigma_bias_acc: float = Field(0.1, gt=0)
    sigma_bias_gyro: float = Field(0.01, gt=0)

    @validator("orientation")
    @classmethod
    def normalize_orientation(
        cls, value: tuple[float, float, float, float] | None
    ) -> tuple[float, float, float, float] | None:
        """Normalize the initial orientation.

        Args:
            value: the configured quaternion.

        Returns:
            The unit quaternion.
        """
        if value is None:
            return None
        return typing.cast(
            tuple[float, float, float, float], tuple(so3_quat.normalize(value).tolist())
        )

    @validator("rcp_positions", "rcp_deltas")
    @classmethod
    def four_rows(
        cls, value: list[tuple[float, float, float]] | None
    ) -> list[tuple[float, float, float]] | None:
        """Check explicit control points come in fours.

        Args:
            value: the configured rows.

        Returns:
            The rows.

        Raises:
            ValueError: if there are not exactly four rows.
        """
        if value is not None and len(value) != 4:
            raise ValueError("exactly four control points are required")
        return value


class ExtrinsicConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """Pose of one LiDAR in the body frame.

    Attrs:
        sensor_id: index of the LiDAR stream.
        rotation: unit quaternion, w-first, rotating sensor vectors into the body frame.
        translation: sensor origin in the body frame in meters.
    """

    sensor_id: int = Field(0, ge=0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @validator("rotation")
    @classmethod
    def normalize_rotation(
        cls, value: tuple[float, float, float, float]
    ) -> tuple[float, float, float, float]:
        """Normalize the rotation quaternion.

        Args:
            value: the configured quaternion.

        Returns:
            The unit quaternion.

        Raises:
            ValueError: if the quaternion is zero.
        """
        return typing.cast(
            tuple[float, float, float, float], tuple(so3_quat.normalize(value).tolist())
        )


def _default_extrinsics() -> list[ExtrinsicConfig]:
    """One body-aligned LiDAR and a second one turned upside down, 0.3 m to the side."""
    return [
        ExtrinsicConfig(sensor_id=0),
        ExtrinsicConfig(sensor_id=1, rotation=(0.0, 1.0, 0.0, 0.0), translation=(0.0, 0.3, 0.0)),
    ]


class SimulatorConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """Synthetic scene generation.

    Attrs:
        duration: length of the sequence in seconds.
        dynamics: motion level of the ground truth.
        pattern: LiDAR scan pattern.
        point_rate: LiDAR points per second per sensor.
        lidar_sigma: range noise std in meters.
        outlier_ratio: fraction of points turned into gross outliers.
        imu_rate: IMU sample rate in Hz.
        imu_sigma_acc: accelerometer noise std in m/s².
        imu_sigma_gyro: gyroscope noise std in rad/s.
        bias_acc: constant accelerometer bias in m/s².
        bias_gyro: constant gyroscope bias in rad/s.
        ground_truth_rate: ground-truth pose rate in Hz.
    """

    duration: float = Field(30.0, gt=0)
    dynamics: Dynamics = "low"
    pattern: Pattern = "spinning"
    point_rate: float = Field(20_000.0, gt=0)
    lidar_sigma: float = Field(0.0, ge=0)
    outlier_ratio: float = Field(0.0, ge=0, lt=1)
    imu_rate: float = Field(400.0, gt=0)
    imu_sigma_acc: float = Field(0.0, ge=0)
    imu_sigma_gyro: float = Field(0.0, ge=0)
    bias_acc: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_gyro: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ground_truth_rate: float = Field(100.0, gt=0)


class RunConfig(BaseModel, extra=Extra.forbid):  # pylint: disable=too-few-public-methods
    """Every tunable of an odometry run.

    Attrs:
        mode: sensor setup, LiDAR only or LiDAR-inertial, single or multi LiDAR.
        knot_frequency: knots per second of the estimated spline.
        batch_span: largest time span of an observation batch in seconds.
        batch_max: largest number of measurements in a batch.
        n_max: maximum number of update iterations.
        eps: update convergence threshold.
        seed: seed of every random generator.
        trajectory_rate: output trajectory rate in Hz, unset means the knot rate.
        estimator: process noise.
        lidar: LiDAR settings.
        imu: IMU settings.
        init: initial belief.
        extrinsics: one entry per LiDAR stream.
        simulator: synthetic scene settings.
    """

    mode: Mode = "LO"
    knot_frequency: float = Field(100.0, gt=0)
    batch_span: float = Field(0.01, gt=0)
    batch_max: int = Field(1000, ge=1)
    n_max: int = Field(5, ge=1)
    eps: float = Field(1e-3, gt=0)
    seed: int = 0
    trajectory_rate: float | None = Field(None, gt=0)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    lidar: LidarConfig = Field(default_factory=LidarConfig)
    imu: ImuConfig = Field(default_factory=ImuConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    extrinsics: list[ExtrinsicConfig] = Field(default_factory=_default_extrinsics, min_items=1)
    simulator: SimulatorConfig = Field(default_factory=SimulatorConfig)

    @validator("extrinsics")
    @classmethod
    def one_entry_per_sensor(cls, value: list[ExtrinsicConfig]) -> list[ExtrinsicConfig]:
        """Check the extrinsics cover sensor ids 0 .. k-1 exactly once.

        Args:
            value: the configured extrinsics.

        Returns:
            The extrinsics sorted by sensor id.

        Raises:
            ValueError: if a sensor id is missing or repeated.
        """
        ordered = sorted(value, key=lambda entry: entry.sensor_id)
        if [entry.sensor_id for entry in ordered] != list(range(len(ordered))):
            raise ValueError("extrinsics need exactly one entry per sensor id 0 .. k-1")
        return ordered

    @root_validator(skip_on_failure=True)
    @classmethod
    def check_batch_span(cls, values: dict) -> dict:
        """Check a batch spans at most a few knot intervals.

        Args:
            values: the field values.

        Returns:
            The field values.

        Raises:
            ValueError: if the batch span is too long.
        """
        if values["batch_span"] > MAX_BATCH_KNOTS / values["knot_frequency"] + 1e-12:
            raise ValueError(f"batch_span must not exceed {MAX_BATCH_KNOTS} knot intervals")
        return values

    @property
    def uses_imu(self) -> bool:
        """Whether the mode fuses IMU samples."""
        return self.mode in ("LIO", "MLIO")

    @property
    def lidar_count(self) -> int:
        """Number of LiDAR streams the mode expects, at least two for multi-LiDAR."""
        return 2 if self.mode in ("MLO", "MLIO") else 1

    @property
    def knot_interval(self) -> float:
        """Knot interval in seconds."""
        return 1.0 / self.knot_frequency


def _merge(base: dict, overrides: typing.Mapping) -> dict:
    """Recursively merge ``overrides`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, typing.Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def from_mapping(values: typing.Mapping, profile: Profile = "indoor") -> RunConfig:
    """Validate a configuration mapping on top of a profile.

    Args:
        values: the configured values, nested by section.
        profile: the profile providing the defaults.

    Returns:
        The validated configuration.

    Raises:
        ConfigInvalidError: if a value is invalid or a key unknown.
    """
    if profile not in PROFILES:
        raise ConfigInvalidError(f"unknown profile {profile}")
    try:
        return RunConfig(**_merge(PROFILES[profile], values))
    except ValidationError as exc:
        error_fields = sorted(
            {".".join(str(part) for part in error["loc"]) for error in exc.errors()}
        )
        raise ConfigInvalidError(f"invalid configuration: {' '.join(error_fields)}") from exc


def load_config(
    path: pathlib.Path | None = None, profile: Profile = "indoor"
) -> RunConfig:
    """Load a YAML configuration file.

    Args:
        path: the file; without it the profile defaults are returned.
        profile: the profile providing the defaults.

    Returns:
        The validated configuration.

    Raises:
        ConfigInvalidError: if the file cannot be read or holds invalid values.
    """
    if path is None:
        return from_mapping({}, profile)
    try:
        values = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalidError(f"cannot read configuration {path}: {exc}") from exc
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigInvalidError(f"configuration {path} must be a mapping")
    return from_mapping(values, profile)


def dump_config(config: RunConfig) -> str:
    """Render a configuration as YAML, every key included.

    Args:
        config: the configuration.

    Returns:
        The YAML document.
    """
    values = _plain(config.dict())
    return yaml.safe_dump(values, sort_keys=False)


def _plain(value: typing.Any) -> typing.Any:
    """Turn tuples into lists so the YAML output stays plain."""
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


__all__ = [
    "ConfigInvalidError",
    "EstimatorConfig",
    "ExtrinsicConfig",
    "ImuConfig",
    "InitConfig",
    "LidarConfig",
    "RunConfig",
    "SimulatorConfig",
    "dump_config",
    "from_mapping",
    "load_config",
]

