# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""LiDAR(-inertial) odometry runner on the recursive spline estimator.

The runner drives the single-writer estimator from one thread: ingest, range
filter and downsample the streams, seed the map, then for every observation
batch predict, run the iterated update and hand the batch's points to the map
maintainer. The posterior trajectory is sampled from the spline at the end.
"""

import dataclasses
import enum
import logging
import time
import typing

import numpy as np
import numpy.typing as npt

import imu_pipeline
import so3_quat
from estimator import (
    Gaussian,
    ProcessNoise,
    RecursiveSplineEstimator,
    SplineState,
    extend_state,
    initial_gaussian,
)
from evaluation import report_runtime
from exceptions import BatchProcessingError, ConfigInvalidError, EstimatorError
from lidar_pipeline import (
    Extrinsics,
    LidarPlaneModel,
    MapMaintainer,
    MeasurementQueue,
    assemble_batch,
    body_points,
    range_filter,
    voxel_downsample,
)
from local_map import LocalMap
from resple_types import ImuSamples, LidarPoints, RuntimeSummary, Trajectory
from run_config import RunConfig
from spline_history import SplineHistory

logger = logging.getLogger(__name__)


class PointStatus(enum.IntEnum):
    """Outcome of a LiDAR point in the update of its batch."""

    KEPT = 0
    NO_PLANE = 1
    VARIANCE_GATE = 2
    RESIDUAL_GATE = 3


@dataclasses.dataclass
class RunReport:  # pylint: disable=too-many-instance-attributes
    """Statistics of an odometry run.

    Attrs:
        batch_span: configured batch span in seconds.
        batch_times: processing time of every batch in seconds.
        iterations: update iterations of every batch.
        point_t: timestamps of the LiDAR points fed to the updates.
        point_sensor: sensor ids of those points.
        point_status: PointStatus of those points in the last update iteration.
        map_size: points in the map at the end of the run.
        global_map: every inserted world point, when the run kept them.
        ape_rmse: APE RMSE in meters, when a ground truth was evaluated.
        belief: the final filter belief.
    """

    batch_span: float
    batch_times: list[float] = dataclasses.field(default_factory=list)
    iterations: list[int] = dataclasses.field(default_factory=list)
    point_t: npt.NDArray[np.float64] = dataclasses.field(default_factory=lambda: np.zeros(0))
    point_sensor: npt.NDArray[np.int64] = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    point_status: npt.NDArray[np.int64] = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    map_size: int = 0
    global_map: npt.NDArray[np.float64] = dataclasses.field(
        default_factory=lambda: np.zeros((0, 3))
    )
    ape_rmse: float | None = None
    belief: Gaussian | None = None

    def runtime(self) -> RuntimeSummary:
        """Return the runtime efficiency and processing time statistics."""
        return report_runtime(self.batch_times, self.batch_span)

    def rejection_rate(self, status: PointStatus) -> float:
        """Return the fraction of processed LiDAR points ending with ``status``."""
        if not self.point_status.size:
            return 0.0
        return float(np.mean(self.point_status == status))

    def to_dict(self) -> dict[str, typing.Any]:
        """Return a plain summary for printing."""
        summary: dict[str, typing.Any] = {
            "batches": len(self.batch_times),
            "lidar_points": int(self.point_status.size),
            "mean_iterations": float(np.mean(self.iterations)) if self.iterations else 0.0,
            "rejection_rates": {
                status.name.lower(): self.rejection_rate(status)
                for status in PointStatus
                if status != PointStatus.KEPT
            },
            "map_size": self.map_size,
        }
        if self.batch_times:
            summary["runtime"] = dict(self.runtime())
        if self.ape_rmse is not None:
            summary["ape_rmse"] = self.ape_rmse
        return summary


def check_streams(
    config: RunConfig, lidar: typing.Sequence[LidarPoints], imu: ImuSamples | None
) -> None:
    """Check the provided streams match the configured mode.

    Args:
        config: the run configuration.
        lidar: one point stream per LiDAR.
        imu: the IMU samples, if any.

    Raises:
        ConfigInvalidError: if the streams do not fit the mode or the extrinsics.
    """
    if config.lidar_count == 1 and len(lidar) != 1:
        raise ConfigInvalidError(
            f"{config.mode} needs exactly one lidar stream, got {len(lidar)}"
        )
    if config.lidar_count > 1 and len(lidar) < 2:
        raise ConfigInvalidError(
            f"{config.mode} needs at least two lidar streams, got {len(lidar)}"
        )
    if len(lidar) > len(config.extrinsics):
        raise ConfigInvalidError(
            f"{len(lidar)} lidar streams but extrinsics for only {len(config.extrinsics)}"
        )
    if config.uses_imu and (imu is None or not len(imu)):
        raise ConfigInvalidError(f"{config.mode} needs an imu stream")
    if not config.uses_imu and imu is not None and len(imu):
        logger.warning("ignoring the imu stream in %s mode", config.mode)


def downsample_stream(points: LidarPoints, leaf: float, span: float) -> LidarPoints:
    """Voxel-downsample time-sorted points in consecutive chunks of ``span`` seconds.

    Args:
        points: points sorted by time.
        leaf: voxel leaf size in meters.
        span: chunk length in seconds.

    Returns:
        The downsampled points, sorted by time.
    """
    if not len(points):
        return points
    chunk = np.floor((points.t - points.t[0]) / span).astype(np.int64)
    bounds = [0, *(np.flatnonzero(np.diff(chunk)) + 1).tolist(), len(points)]
    return LidarPoints.concatenate(
        [voxel_downsample(points.take(slice(a, b)), leaf) for a, b in zip(bounds, bounds[1:])]
    )


def _extrinsics(config: RunConfig) -> list[Extrinsics]:
    """Build the extrinsics indexed by sensor id."""
    return [
        Extrinsics(
            rotation=np.asarray(entry.rotation, dtype=float),
            translation=np.asarray(entry.translation, dtype=float),
        )
        for entry in config.extrinsics
    ]


def _ingest(
    config: RunConfig, lidar: typing.Sequence[LidarPoints], imu: ImuSamples | None
) -> tuple[LidarPoints, ImuSamples]:
    """Tag, filter and downsample the LiDAR streams; drop implausible IMU samples."""
    tagged = [
        range_filter(
            LidarPoints(points.t, points.xyz, np.full(len(points), sensor_id, dtype=np.int64)),
            config.lidar.min_range,
            config.lidar.max_range,
        )
        for sensor_id, points in enumerate(lidar)
    ]
    raw = sum(len(points) for points in tagged)
    merged = downsample_stream(
        LidarPoints.concatenate(tagged), config.lidar.leaf_size, config.lidar.downsample_span
    )
    logger.info("downsampled %d lidar points to %d", raw, len(merged))
    samples = ImuSamples.empty()
    if config.uses_imu and imu is not None:
        samples = imu_pipeline.plausible_samples(imu.take(np.argsort(imu.t, kind="stable")))
    return merged, samples


def _initial_belief(
    config: RunConfig, t_start: float, imu: ImuSamples, gravity: npt.NDArray[np.float64]
) -> Gaussian:
    """Bootstrap the estimator belief from the configuration."""
    init = config.init
    if init.orientation is not None:
        orientation = np.asarray(init.orientation, dtype=float)
    elif config.uses_imu:
        orientation = imu_pipeline.initial_orientation(
            imu, config.imu.align_duration, gravity, config.imu.align_tolerance
        )
    else:
        orientation = so3_quat.IDENTITY
    return initial_gaussian(
        t_start,
        config.knot_interval,
        init.position,
        orientation,
        {
            "position": init.sigma_position,
            "delta": init.sigma_delta,
            "bias_acc": init.sigma_bias_acc,
            "bias_gyro": init.sigma_bias_gyro,
        },
        with_biases=config.uses_imu,
        pos_rcp=init.rcp_positions,
        ori_deltas=init.rcp_deltas,
    )


def seed_map(
    maintainer: MapMaintainer,
    state: SplineState,
    points: LidarPoints,
    extrinsics: typing.Sequence[Extrinsics],
) -> int:
    """Insert the first points into the map, posed by noise-free extrapolation of ``state``.

    Args:
        maintainer: the map maintainer.
        state: the initial filter state.
        points: the seeding points, none older than the active segment.
        extrinsics: extrinsics indexed by sensor id.

    Returns:
        The number of points stored by the map.
    """
    if not len(points):
        return 0
    history = SplineHistory.from_state(state)
    while np.max(points.t) >= state.grid.knot(state.grid.n):
        state, retired = extend_state(state)
        history.retire(retired)
    p_world = history.transform_points(points.t, body_points(points, extrinsics), state)
    return maintainer.insert_world(p_world)


def _status(model: LidarPlaneModel) -> npt.NDArray[np.int64]:
    """PointStatus of every point of a LiDAR model."""
    status = np.full(len(model.kept), PointStatus.NO_PLANE, dtype=np.int64)
    status[model.kept] = PointStatus.KEPT
    status[model.rejected_variance] = PointStatus.VARIANCE_GATE
    status[model.rejected_residual] = PointStatus.RESIDUAL_GATE
    return status


def sample_trajectory(
    history: SplineHistory, state: SplineState, rate: float
) -> Trajectory:
    """Sample the posterior spline at a fixed rate over its whole span.

    Args:
        history: the retired control points.
        state: the final filter state.
        rate: poses per second.

    Returns:
        The trajectory.
    """
    start, end = history.span(state)
    count = int(np.ceil((end - start) * rate))
    times = start + np.arange(count) / rate
    times = times[times < end]
    position, orientation = history.evaluate(times, state)
    return Trajectory(t=times, position=position, orientation=orientation)


def run_odometry(  # pylint: disable=too-many-locals,too-many-statements
    config: RunConfig,
    lidar: typing.Sequence[LidarPoints],
    imu: ImuSamples | None = None,
    keep_map: bool = False,
) -> tuple[Trajectory, RunReport]:
    """Run the odometry over recorded streams.

    Args:
        config: the run configuration.
        lidar: one point stream per LiDAR, in the order of the extrinsics.
        imu: the IMU samples for the inertial modes.
        keep_map: keep every inserted world point for the global map output.

    Returns:
        The posterior trajectory and the run report.

    Raises:
        ConfigInvalidError: if the streams do not fit the configuration.
        BatchProcessingError: if the estimator fails on a batch.
    """
    check_streams(config, lidar, imu)
    logger.info(
        "running %s odometry on %d lidar streams, %.1f hz knots, %.1f ms batches",
        config.mode,
        len(lidar),
        config.knot_frequency,
        config.batch_span * 1e3,
    )
    extrinsics = _extrinsics(config)
    gravity = imu_pipeline.gravity_vector(config.imu.gravity_magnitude)
    points, samples = _ingest(config, lidar, imu)
    if not len(points):
        raise ConfigInvalidError("no lidar points left after filtering")

    t_start = config.init.start_time if config.init.start_time is not None else points.t[0]
    t_seeded = t_start + config.lidar.map_init_span
    initial = _initial_belief(config, t_start, samples, gravity)

    local_map = LocalMap(config.lidar.map_voxel_size, config.lidar.map_resolution)
    maintainer = MapMaintainer(local_map, extrinsics, watermark=t_seeded, keep_global=keep_map)
    seeded = seed_map(
        maintainer,
        initial.mean,
        points.take((points.t >= t_start) & (points.t < t_seeded)),
        extrinsics,
    )
    logger.info("seeded the map with %d points", seeded)

    estimator = RecursiveSplineEstimator(
        initial,
        ProcessNoise(
            sigma_position=config.estimator.sigma_position,
            sigma_delta=config.estimator.sigma_delta,
            sigma_bias_acc=config.imu.sigma_bias_acc,
            sigma_bias_gyro=config.imu.sigma_bias_gyro,
            q_random_walk=config.estimator.q_random_walk,
        ),
        n_max=config.n_max,
        eps=config.eps,
    )
    queue = MeasurementQueue(
        points.take(points.t >= t_seeded), samples.take(samples.t >= t_start)
    )
    report = RunReport(batch_span=config.batch_span)
    statuses: list[tuple[LidarPoints, npt.NDArray[np.int64]]] = []
    batch_index = 0
    while len(queue):
        batch = assemble_batch(
            queue, config.batch_max, config.batch_span, estimator.belief.mean.grid
        )
        started = time.perf_counter()
        try:
            prior = estimator.predict(batch.t_max)
            models: list = []
            lidar_model = None
            if len(batch.lidar):
                lidar_model = LidarPlaneModel(
                    batch.lidar,
                    extrinsics,
                    local_map,
                    prior.cov,
                    config.lidar.sigma,
                    n_neighbors=config.lidar.n_neighbors,
                    plane_rms_max=config.lidar.plane_rms_max,
                    assoc_dist_max=config.lidar.assoc_dist_max,
                    outlier_threshold=config.lidar.variance_threshold,
                    residual_gate=config.lidar.residual_gate,
                    reassociate=config.lidar.reassociate,
                )
                models.append(lidar_model)
            if config.uses_imu and len(batch.imu):
                models.append(
                    imu_pipeline.ImuModel(
                        batch.imu, gravity, config.imu.sigma_acc, config.imu.sigma_gyro
                    )
                )
            result = estimator.update(models, batch.t_max)
            if lidar_model is not None:
                maintainer.add(batch.lidar.take(~lidar_model.rejected_residual))
            maintainer.maintain(estimator.history)
        except EstimatorError as exc:
            logger.error("estimator failed on batch %d: %s", batch_index, exc.msg)
            raise BatchProcessingError(exc.msg, batch_index) from exc
        report.batch_times.append(time.perf_counter() - started)
        report.iterations.append(result.iterations)
        if lidar_model is not None:
            status = _status(lidar_model)
            statuses.append((batch.lidar, status))
            kept = int(np.count_nonzero(status == PointStatus.KEPT))
            if not kept and len(local_map):
                logger.warning(
                    "all %d lidar points of batch %d were rejected", len(batch.lidar), batch_index
                )
            logger.debug(
                "batch %d: %d lidar, %d imu, %d iterations, %d kept",
                batch_index,
                len(batch.lidar),
                len(batch.imu),
                result.iterations,
                kept,
            )
        batch_index += 1

    state = estimator.belief.mean
    maintainer.flush(estimator.history, state)
    if statuses:
        report.point_t = np.concatenate([batch_points.t for batch_points, _ in statuses])
        report.point_sensor = np.concatenate(
            [batch_points.sensor_id for batch_points, _ in statuses]
        )
        report.point_status = np.concatenate([status for _, status in statuses])
    report.map_size = len(local_map)
    report.global_map = maintainer.global_map
    report.belief = estimator.belief
    trajectory = sample_trajectory(
        estimator.history, state, config.trajectory_rate or config.knot_frequency
    )
    if report.batch_times:
        logger.info(
            "processed %d batches, runtime efficiency %.3f", batch_index, report.runtime()["xi"]
        )
    return trajectory, report
