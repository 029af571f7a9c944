# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Direct LiDAR odometry on the spline state.

Every point is mapped to the world frame with the pose interpolated at its own
timestamp, associated with a plane fitted to its nearest map neighbors, and
contributes one point-to-plane residual to the iterated update. Points are never
re-timed to a common scan time.
"""

import dataclasses
import logging
import typing

import numpy as np
import numpy.typing as npt

import so3_quat
import spline
from constants import (
    ORIENTATION_BLOCK,
    OUTLIER_SIGMA_SCALE,
    PLANE_MIN_SPREAD_RATIO,
    POSITION_BLOCK,
)
from estimator import Linearization, MeasurementModel, SplineState
from local_map import LocalMap
from resple_types import ImuSamples, LidarPoints, ObservationBatch
from spline_history import SplineHistory

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Extrinsics:
    """Pose of one LiDAR in the body (IMU) frame.

    Attrs:
        rotation: unit quaternion rotating sensor-frame vectors into the body frame.
        translation: sensor origin in the body frame in meters.
    """

    rotation: npt.NDArray[np.float64] = dataclasses.field(
        default_factory=lambda: so3_quat.IDENTITY.copy()
    )
    translation: npt.NDArray[np.float64] = dataclasses.field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        """Normalize the rotation.

        Raises:
            ValueError: if the rotation quaternion is zero.
        """
        object.__setattr__(self, "rotation", so3_quat.normalize(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    def to_body(self, xyz: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Map sensor-frame points to the body frame: ``p_I = R p_L + s``."""
        return so3_quat.rotate(self.rotation, xyz) + self.translation


def body_points(
    points: LidarPoints, extrinsics: typing.Sequence[Extrinsics]
) -> npt.NDArray[np.float64]:
    """Map the points of every sensor to the body frame.

    Args:
        points: points from any number of sensors.
        extrinsics: extrinsics indexed by sensor id.

    Returns:
        Body-frame points of shape (m, 3).

    Raises:
        ValueError: if a sensor id has no extrinsics.
    """
    result = np.empty((len(points), 3))
    for sensor_id in np.unique(points.sensor_id):
        if not 0 <= sensor_id < len(extrinsics):
            raise ValueError(f"no extrinsics for lidar {sensor_id}")
        mask = points.sensor_id == sensor_id
        result[mask] = extrinsics[sensor_id].to_body(points.xyz[mask])
    return result


class PlaneFit(typing.NamedTuple):
    """Local planes associated with LiDAR points.

    Attrs:
        normal: unit plane normals, shape (m, 3).
        anchor: nearest map neighbor of each point, shape (m, 3).
        rms: root mean square distance of the neighbors to the plane, shape (m,).
        valid: whether the plane may be used, shape (m,).
    """

    normal: npt.NDArray[np.float64]
    anchor: npt.NDArray[np.float64]
    rms: npt.NDArray[np.float64]
    valid: npt.NDArray[np.bool_]


def range_filter(points: LidarPoints, min_range: float, max_range: float) -> LidarPoints:
    """Keep finite points whose sensor-frame range lies in ``[min_range, max_range]``."""
    ranges = np.linalg.norm(points.xyz, axis=-1)
    keep = np.all(np.isfinite(points.xyz), axis=-1) & np.isfinite(points.t)
    keep &= (ranges >= min_range) & (ranges <= max_range)
    return points.take(keep)


def voxel_downsample(points: LidarPoints, leaf: float) -> LidarPoints:
    """Keep the point closest to the centroid of every occupied voxel.

    Voxels are formed per sensor in the sensor frame. The survivors keep their
    own timestamps and are returned sorted by time.

    Args:
        points: the points to thin out.
        leaf: voxel edge length in meters.

    Returns:
        At most one point per voxel.

    Raises:
        ValueError: if the leaf size is not positive.
    """
    if not leaf > 0.0:
        raise ValueError(f"voxel leaf size must be positive, got {leaf}")
    if not len(points):
        return points
    keys = np.column_stack([np.floor(points.xyz / leaf).astype(np.int64), points.sensor_id])
    _, voxel, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    voxel = voxel.ravel()
    centroids = np.zeros((len(counts), 3))
    np.add.at(centroids, voxel, points.xyz)
    centroids /= counts[:, None]
    distances = np.linalg.norm(points.xyz - centroids[voxel], axis=-1)
    order = np.lexsort((np.arange(len(points)), distances, voxel))
    first = np.ones(len(order), dtype=bool)
    first[1:] = voxel[order[1:]] != voxel[order[:-1]]
    survivors = np.sort(order[first])
    return points.take(survivors[np.argsort(points.t[survivors], kind="stable")])


class MeasurementQueue:
    """Time-ordered LiDAR and IMU measurements waiting to be fused.

    Attrs:
        lidar: queued LiDAR points, sorted by time.
        imu: queued IMU samples, sorted by time.
    """

    def __init__(self, lidar: LidarPoints, imu: ImuSamples):
        """Sort both streams on ingest.

        Args:
            lidar: LiDAR points of all sensors.
            imu: IMU samples.
        """
        self.lidar = lidar.take(np.argsort(lidar.t, kind="stable"))
        self.imu = imu.take(np.argsort(imu.t, kind="stable"))
        self._lidar_head = 0
        self._imu_head = 0

    def __len__(self) -> int:
        """Return the number of measurements not yet batched."""
        return len(self.lidar) - self._lidar_head + len(self.imu) - self._imu_head

    def _next_times(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Return the timestamps still queued in each stream."""
        return self.lidar.t[self._lidar_head :], self.imu.t[self._imu_head :]

    def pop_until(self, t_limit: float, max_count: int) -> ObservationBatch:
        """Remove up to ``max_count`` of the oldest measurements older than ``t_limit``.

        Args:
            t_limit: exclusive upper time bound.
            max_count: largest number of measurements to remove.

        Returns:
            The removed measurements.
        """
        lidar_t, imu_t = self._next_times()
        n_lidar = int(np.searchsorted(lidar_t, t_limit, side="left"))
        n_imu = int(np.searchsorted(imu_t, t_limit, side="left"))
        if n_lidar + n_imu > max_count:
            times = np.concatenate([lidar_t[:n_lidar], imu_t[:n_imu]])
            from_imu = np.arange(times.size) >= n_lidar
            chosen = np.argsort(times, kind="stable")[:max_count]
            n_imu = int(np.count_nonzero(from_imu[chosen]))
            n_lidar = max_count - n_imu
        lidar = self.lidar.take(slice(self._lidar_head, self._lidar_head + n_lidar))
        imu = self.imu.take(slice(self._imu_head, self._imu_head + n_imu))
        self._lidar_head += n_lidar
        self._imu_head += n_imu
        return ObservationBatch(lidar=lidar, imu=imu)

    def oldest(self) -> float:
        """Return the oldest queued timestamp, or infinity for an empty queue."""
        lidar_t, imu_t = self._next_times()
        return float(
            min(lidar_t[0] if lidar_t.size else np.inf, imu_t[0] if imu_t.size else np.inf)
        )


def assemble_batch(
    queue: MeasurementQueue, max_count: int, span_limit: float, grid: spline.KnotGrid
) -> ObservationBatch:
    """Take the next observation batch from the queue.

    The batch starts at the oldest queued measurement, covers less than
    ``span_limit`` seconds, holds at most ``max_count`` measurements and never
    crosses a knot of ``grid``.

    Args:
        queue: the measurement queue.
        max_count: largest number of measurements in a batch.
        span_limit: largest time span of a batch in seconds.
        grid: the knot grid of the estimator.

    Returns:
        The batch; empty when the queue is exhausted.

    Raises:
        ValueError: if a limit is not positive.
    """
    if max_count < 1 or not span_limit > 0.0:
        raise ValueError("batch limits must be positive")
    start = queue.oldest()
    if not np.isfinite(start):
        return ObservationBatch(lidar=LidarPoints.empty(), imu=ImuSamples.empty())
    boundary = grid.knot(int(grid.segment_of(start)))
    if boundary <= start:
        boundary += grid.tau
    return queue.pop_until(min(start + span_limit, boundary), max_count)


def _pose_at(
    state: SplineState, t: npt.NDArray[np.float64]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Return normalized times, quaternions and positions of the active segment."""
    u, _ = spline.normalized_time(t, state.grid)
    u = np.atleast_1d(u)
    r = spline.orientation_eval(state.orientation_segment, u)
    s = spline.position_eval(state.position_segment, u, state.grid.tau)
    return u, r, s


def world_points(
    state: SplineState, t: npt.ArrayLike, p_body: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Map body-frame points to the world frame with the active segment.

    Args:
        state: the spline state.
        t: point timestamps inside the active segment, shape (m,).
        p_body: body-frame points, shape (m, 3).

    Returns:
        World-frame points of shape (m, 3).
    """
    _, r, s = _pose_at(state, np.atleast_1d(np.asarray(t, dtype=float)))
    return so3_quat.rotate(r, np.asarray(p_body, dtype=float).reshape(-1, 3)) + s


def fit_planes(
    neighbors: npt.NDArray[np.float64],
    distances: npt.NDArray[np.float64],
    n_neighbors: int,
    plane_rms_max: float,
    assoc_dist_max: float,
) -> PlaneFit:
    """Least-squares planes through neighbor sets.

    Neighbor sets spread along a single line are invalid as well.

    Args:
        neighbors: neighbor points sorted by distance, shape (m, k, 3).
        distances: neighbor distances, shape (m, k).
        n_neighbors: number of neighbors a valid plane needs.
        plane_rms_max: planes at least this rough are invalid.
        assoc_dist_max: planes whose farthest neighbor is at least this far are invalid.

    Returns:
        The fitted planes.
    """
    count = neighbors.shape[0]
    if neighbors.shape[1] < max(n_neighbors, 3):
        normal = np.tile([0.0, 0.0, 1.0], (count, 1))
        anchor = neighbors[:, 0] if neighbors.shape[1] else np.zeros((count, 3))
        return PlaneFit(normal, anchor, np.full(count, np.inf), np.zeros(count, dtype=bool))
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    scatter = np.einsum("mki,mkj->mij", centered, centered)
    values, vectors = np.linalg.eigh(scatter)
    normal = vectors[..., 0]
    rms = np.sqrt(np.mean(np.einsum("mki,mi->mk", centered, normal) ** 2, axis=-1))
    valid = (rms < plane_rms_max) & (distances[:, -1] < assoc_dist_max)
    # nearly collinear neighbors leave the normal undetermined
    valid &= values[:, 1] > PLANE_MIN_SPREAD_RATIO * values[:, 2]
    return PlaneFit(normal, neighbors[:, 0], rms, valid)


def associate(
    p_world: npt.ArrayLike,
    local_map: LocalMap,
    n_neighbors: int = 5,
    plane_rms_max: float = 0.1,
    assoc_dist_max: float = 2.0,
) -> PlaneFit:
    """Fit a plane to the nearest map neighbors of one world-frame point.

    Args:
        p_world: the point, shape (3,).
        local_map: the map.
        n_neighbors: number of neighbors in the fit.
        plane_rms_max: planes at least this rough are invalid.
        assoc_dist_max: planes whose farthest neighbor is at least this far are invalid.

    Returns:
        The plane, with arrays of batch size one.
    """
    indices, distances = local_map.knn(p_world, n_neighbors)
    return fit_planes(
        local_map.points[indices][None],
        distances[None],
        n_neighbors,
        plane_rms_max,
        assoc_dist_max,
    )


def associate_batch(
    p_world: npt.ArrayLike,
    local_map: LocalMap,
    n_neighbors: int = 5,
    plane_rms_max: float = 0.1,
    assoc_dist_max: float = 2.0,
) -> PlaneFit:
    """Vectorized :func:`associate` over many points against one map snapshot."""
    indices, distances = local_map.knn_batch(p_world, n_neighbors)
    return fit_planes(
        local_map.points[indices], distances, n_neighbors, plane_rms_max, assoc_dist_max
    )


def point_residual(
    state: SplineState,
    points: LidarPoints,
    extrinsics: typing.Sequence[Extrinsics],
    fit: PlaneFit,
) -> npt.NDArray[np.float64]:
    """Signed point-to-plane distances ``nᵀ(R(t) p_I + s(t) - ᾱ)``.

    Args:
        state: the spline state.
        points: points inside the active segment.
        extrinsics: extrinsics indexed by sensor id.
        fit: the associated planes.

    Returns:
        Distances in meters, shape (m,).

    Raises:
        OutOfSpanError: if a point lies outside the active segment.
    """
    p_world = world_points(state, points.t, body_points(points, extrinsics))
    return np.einsum("mi,mi->m", fit.normal, p_world - fit.anchor)


def _residual_jacobian(
    state: SplineState, t: npt.NDArray[np.float64], p_body: npt.NDArray[np.float64], fit: PlaneFit
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Point-to-plane residuals and their Jacobians from body-frame points."""
    u, r, s = _pose_at(state, t)
    p_world = so3_quat.rotate(r, p_body) + s
    residual = np.einsum("mi,mi->m", fit.normal, p_world - fit.anchor)
    jacobian = np.zeros((len(t), state.dim))
    lambda_pos = spline.position_kinematics_matrix(u, state.grid.tau)
    jacobian[:, POSITION_BLOCK] = np.einsum("mi,mij->mj", fit.normal, lambda_pos)
    d_rot = so3_quat.d_rotation_d_q(r, p_body)
    jac_r = spline.jac_orientation_wrt_deltas(state.orientation_segment, u)
    jacobian[:, ORIENTATION_BLOCK] = np.einsum("mi,mij,mjk->mk", fit.normal, d_rot, jac_r)
    return residual, jacobian


def point_jacobian(
    state: SplineState,
    points: LidarPoints,
    extrinsics: typing.Sequence[Extrinsics],
    fit: PlaneFit,
) -> npt.NDArray[np.float64]:
    """Jacobian of :func:`point_residual` w.r.t. the stacked state vector.

    The bias columns are zero.

    Args:
        state: the spline state.
        points: points inside the active segment.
        extrinsics: extrinsics indexed by sensor id.
        fit: the associated planes.

    Returns:
        One row per point, shape (m, dim).
    """
    _, jacobian = _residual_jacobian(
        state, np.atleast_1d(points.t), body_points(points, extrinsics), fit
    )
    return jacobian


def outlier_gate(
    jacobian: npt.NDArray[np.float64],
    cov: npt.NDArray[np.float64],
    noise_var: float,
    threshold: float,
) -> tuple[npt.NDArray[np.bool_], npt.NDArray[np.float64]]:
    """Variance gate on the predicted innovation covariance ``H P Hᵀ + R``.

    Args:
        jacobian: Jacobian rows, shape (m, dim).
        cov: the predicted state covariance.
        noise_var: LiDAR measurement variance in m².
        threshold: largest accepted innovation variance in m².

    Returns:
        The keep mask and the innovation variances.
    """
    jacobian = np.atleast_2d(jacobian)
    variance = np.einsum("mi,ij,mj->m", jacobian, cov, jacobian) + noise_var
    return variance < threshold, variance


class LidarPlaneModel(MeasurementModel):
    """Point-to-plane residuals of the LiDAR points of one observation batch.

    Each point is gated against the predicted covariance at the first iteration
    that finds it a plane; the decision then holds for the rest of the update.
    The variance gate never drops below 25 times the median innovation variance
    of the points gated together.
    Points whose plane becomes invalid in a later iteration drop out of that
    iteration.

    Attrs:
        kept: points that passed every gate in the latest linearization.
        rejected_variance: points rejected by the variance gate.
        rejected_residual: points rejected by the innovation gate.
        fit: the planes of the latest association.
    """

    # pylint: disable=too-many-instance-attributes,too-many-arguments

    def __init__(
        self,
        points: LidarPoints,
        extrinsics: typing.Sequence[Extrinsics],
        local_map: LocalMap,
        prior_cov: npt.NDArray[np.float64],
        sigma: float,
        n_neighbors: int = 5,
        plane_rms_max: float = 0.1,
        assoc_dist_max: float = 2.0,
        outlier_threshold: float | None = None,
        residual_gate: float = 25.0,
        reassociate: bool = True,
    ):
        """Initialize the model.

        Args:
            points: the batch's LiDAR points.
            extrinsics: extrinsics indexed by sensor id.
            local_map: the map to associate against; must not change during the update.
            prior_cov: the predicted state covariance used by the gates.
            sigma: LiDAR range noise std in meters.
            n_neighbors: number of neighbors per plane.
            plane_rms_max: planes at least this rough are invalid.
            assoc_dist_max: planes whose farthest neighbor is at least this far are invalid.
            outlier_threshold: variance gate threshold in m², five range noise
                stds squared when unset.
            residual_gate: innovation gate on ``γ² / (H P Hᵀ + R)``.
            reassociate: refresh the planes at every iteration.
        """
        self._t = np.atleast_1d(points.t)
        self._p_body = body_points(points, extrinsics)
        self._map = local_map
        self._prior_cov = prior_cov
        self._noise_var = sigma**2
        self._association = {
            "n_neighbors": n_neighbors,
            "plane_rms_max": plane_rms_max,
            "assoc_dist_max": assoc_dist_max,
        }
        self._outlier_threshold = (
            (OUTLIER_SIGMA_SCALE * sigma) ** 2 if outlier_threshold is None else outlier_threshold
        )
        self._residual_gate = residual_gate
        self._reassociate = reassociate
        self._decided = np.zeros(len(self._t), dtype=bool)
        self._passed = np.zeros(len(self._t), dtype=bool)
        self.fit: PlaneFit | None = None
        self.kept = np.zeros(len(self._t), dtype=bool)
        self.rejected_variance = np.zeros(len(self._t), dtype=bool)
        self.rejected_residual = np.zeros(len(self._t), dtype=bool)

    def _associate(self, state: SplineState) -> PlaneFit:
        """Associate the points posed by ``state`` with map planes."""
        if self.fit is None or self._reassociate:
            p_world = world_points(state, self._t, self._p_body)
            self.fit = associate_batch(p_world, self._map, **self._association)
        return self.fit

    def _gate(
        self, residual: npt.NDArray[np.float64], jacobian: npt.NDArray[np.float64], fit: PlaneFit
    ) -> npt.NDArray[np.bool_]:
        """Gate the points that have a plane for the first time, then apply every decision."""
        fresh = fit.valid & ~self._decided
        if fresh.any():
            _, variance = outlier_gate(jacobian[fresh], self._prior_cov, self._noise_var, np.inf)
            # an uncertain prior widens the gate instead of starving the update
            threshold = max(
                self._outlier_threshold, OUTLIER_SIGMA_SCALE**2 * float(np.median(variance))
            )
            variance_ok = variance < threshold
            residual_ok = residual[fresh] ** 2 / variance < self._residual_gate
            self.rejected_variance[fresh] = ~variance_ok
            self.rejected_residual[fresh] = variance_ok & ~residual_ok
            self._passed[fresh] = variance_ok & residual_ok
            self._decided |= fresh
        return self._passed & fit.valid

    def linearize(self, state: SplineState) -> Linearization:
        """Associate, gate and linearize the kept points.

        Args:
            state: the iterate.

        Returns:
            Innovations ``-h``, Jacobian rows and noise of the kept points.
        """
        if not len(self._t) or not len(self._map):
            return Linearization(np.zeros(0), np.zeros((0, state.dim)), np.zeros(0))
        fit = self._associate(state)
        residual, jacobian = _residual_jacobian(state, self._t, self._p_body, fit)
        self.kept = self._gate(residual, jacobian, fit)
        rows = np.flatnonzero(self.kept)
        return Linearization(
            -residual[rows], jacobian[rows], np.full(rows.size, self._noise_var)
        )

    def residual(self, state: SplineState) -> npt.NDArray[np.float64]:
        """Return the innovations of the kept points."""
        return self.linearize(state).residual

    def jacobian(self, state: SplineState) -> npt.NDArray[np.float64]:
        """Return the Jacobian rows of the kept points."""
        return self.linearize(state).jacobian

    def noise_cov(self) -> npt.NDArray[np.float64]:
        """Return the LiDAR variance of every kept point."""
        return np.full(int(np.count_nonzero(self.kept)), self._noise_var)


class MapMaintainer:
    """Inserts LiDAR points into the map once their spline segment is idle.

    Attrs:
        local_map: the map receiving the points.
        watermark: points older than this time have been handled.
    """

    def __init__(
        self,
        local_map: LocalMap,
        extrinsics: typing.Sequence[Extrinsics],
        watermark: float = -np.inf,
        keep_global: bool = False,
    ):
        """Initialize the maintainer.

        Args:
            local_map: the map receiving the points.
            extrinsics: extrinsics indexed by sensor id.
            watermark: points older than this time are never inserted.
            keep_global: also log every inserted world point for the mapping output.
        """
        self.local_map = local_map
        self.watermark = watermark
        self._extrinsics = extrinsics
        self._pending: list[LidarPoints] = []
        self._keep_global = keep_global
        self._global: list[npt.NDArray[np.float64]] = []

    def add(self, points: LidarPoints) -> None:
        """Queue points for insertion once their segment is idle."""
        if len(points):
            self._pending.append(points)

    @property
    def global_map(self) -> npt.NDArray[np.float64]:
        """Every world point inserted so far, shape (m, 3)."""
        if not self._global:
            return np.zeros((0, 3))
        return np.concatenate(self._global)

    def _insert_until(
        self, history: SplineHistory, t_limit: float, state: SplineState | None
    ) -> int:
        """Insert the pending points in ``[watermark, t_limit)``."""
        if t_limit <= self.watermark or not self._pending:
            return 0
        pending = LidarPoints.concatenate(self._pending)
        pending = pending.take(pending.t >= self.watermark)
        due = pending.t < t_limit
        self._pending = [pending.take(~due)]
        self.watermark = t_limit
        points = pending.take(due)
        if not len(points):
            return 0
        p_world = history.transform_points(
            points.t, body_points(points, self._extrinsics), state
        )
        return self.insert_world(p_world)

    def insert_world(self, p_world: npt.NDArray[np.float64]) -> int:
        """Insert world-frame points right away, logging them for the global map.

        Args:
            p_world: world-frame points, shape (m, 3).

        Returns:
            The number of points stored by the map.
        """
        if self._keep_global:
            self._global.append(p_world)
        inserted = self.local_map.insert(p_world)
        logger.debug("inserted %d of %d points into the map", inserted, len(p_world))
        return inserted

    def maintain(self, history: SplineHistory) -> int:
        """Insert the pending points of every idle segment.

        Args:
            history: the retired posterior control points.

        Returns:
            The number of points stored by the map.
        """
        idle = history.last_idle_segment
        if idle < history.first_segment:
            return 0
        return self._insert_until(history, history.knot(idle), None)

    def flush(self, history: SplineHistory, state: SplineState) -> int:
        """Insert every pending point with the final posterior.

        Args:
            history: the retired posterior control points.
            state: the final filter state.

        Returns:
            The number of points stored by the map.
        """
        return self._insert_until(history, history.span(state)[1], state)
