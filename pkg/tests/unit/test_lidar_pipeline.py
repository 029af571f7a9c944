# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Unit tests for the LiDAR pipeline."""

# pylint: disable=protected-access

import numpy as np
import pytest

import estimator
import lidar_pipeline
import so3_quat
import spline
from estimator import Gaussian, ProcessNoise, SplineState
from lidar_pipeline import (
    Extrinsics,
    LidarPlaneModel,
    MapMaintainer,
    MeasurementQueue,
    PlaneFit,
)
from local_map import LocalMap
from resple_types import ImuSamples, LidarPoints
from spline import KnotGrid
from spline_history import SplineHistory
from tests.unit.conftest import numerical_jacobian, random_spline_state, random_unit_quaternion


def _points(times, xyz, sensor_id=None) -> LidarPoints:
    """Build LiDAR points."""
    times = np.asarray(times, dtype=float)
    return LidarPoints(
        t=times,
        xyz=np.asarray(xyz, dtype=float).reshape(-1, 3),
        sensor_id=(
            np.zeros(times.size, dtype=np.int64)
            if sensor_id is None
            else np.asarray(sensor_id, dtype=np.int64)
        ),
    )


def _resting_state(position=(0.0, 0.0, 0.0), anchor=so3_quat.IDENTITY) -> SplineState:
    """A state resting at a pose, active segment [0.1, 0.2)."""
    return SplineState(
        pos_rcp=np.tile(np.asarray(position, dtype=float), (4, 1)),
        ori_deltas=np.zeros((4, 3)),
        b_acc=np.zeros(3),
        b_gyro=np.zeros(3),
        r_anchor=np.asarray(anchor, dtype=float),
        grid=KnotGrid(t0=0.0, tau=0.1, n=2),
    )


def _floor_map(spacing: float = 0.2, extent: float = 3.0) -> LocalMap:
    """A map holding a grid of points on the plane z = 0."""
    axis = np.arange(-extent, extent + 1e-9, spacing)
    xs, ys = np.meshgrid(axis, axis)
    local_map = LocalMap(voxel_size=0.5)
    local_map.insert(np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)]))
    return local_map


def _random_fit(rng: np.random.Generator, count: int) -> PlaneFit:
    """Random valid planes."""
    normal = rng.normal(size=(count, 3))
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    return PlaneFit(
        normal, rng.normal(size=(count, 3)), np.zeros(count), np.ones(count, dtype=bool)
    )


def test_extrinsics_map_sensor_to_body() -> None:
    """
    arrange: a LiDAR yawed by 90 degrees and shifted along x.
    act: map a sensor-frame point to the body frame.
    assert: the point is rotated then translated.
    """
    ext = Extrinsics(
        rotation=np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)]),
        translation=np.array([0.5, 0.0, 0.0]),
    )

    np.testing.assert_allclose(ext.to_body([1.0, 0.0, 0.0]), [0.5, 1.0, 0.0], atol=1e-12)


def test_extrinsics_normalize_and_reject_zero() -> None:
    """
    arrange: none.
    act: build extrinsics from a scaled and a zero quaternion.
    assert: the scaled one is normalized, the zero one rejected.
    """
    assert np.linalg.norm(Extrinsics(rotation=np.array([2.0, 0.0, 0.0, 0.0])).rotation) == 1.0
    with pytest.raises(ValueError):
        Extrinsics(rotation=np.zeros(4))


def test_body_points_requires_extrinsics_per_sensor() -> None:
    """
    arrange: a point from sensor 1 and extrinsics for sensor 0 only.
    act: map the points to the body frame.
    assert: a ValueError is raised.
    """
    with pytest.raises(ValueError):
        lidar_pipeline.body_points(_points([0.0], [[1.0, 0.0, 0.0]], [1]), [Extrinsics()])


def test_range_filter() -> None:
    """
    arrange: points closer than, inside and beyond the range limits, and a NaN point.
    act: filter them.
    assert: only the point inside the limits survives.
    """
    points = _points(
        [0.0, 0.1, 0.2, 0.3],
        [[0.1, 0.0, 0.0], [5.0, 0.0, 0.0], [200.0, 0.0, 0.0], [np.nan, 0.0, 0.0]],
    )

    kept = lidar_pipeline.range_filter(points, 0.5, 100.0)

    np.testing.assert_array_equal(kept.t, [0.1])


def test_voxel_downsample_keeps_point_nearest_centroid() -> None:
    """
    arrange: three points in one voxel and one point in another.
    act: downsample with a 1 m leaf.
    assert: one survivor per voxel, the one nearest the centroid, sorted by time.
    """
    points = _points(
        [0.3, 0.1, 0.2, 0.0],
        [[0.1, 0.1, 0.1], [0.5, 0.5, 0.5], [0.9, 0.9, 0.9], [3.5, 0.5, 0.5]],
    )

    kept = lidar_pipeline.voxel_downsample(points, 1.0)

    np.testing.assert_array_equal(kept.t, [0.0, 0.1])
    np.testing.assert_array_equal(kept.xyz[1], [0.5, 0.5, 0.5])


def test_voxel_downsample_keeps_sparse_points() -> None:
    """
    arrange: points on a grid coarser than the leaf.
    act: downsample.
    assert: every point survives.
    """
    axis = np.arange(5) * 1.0 + 0.5
    xyz = np.array(np.meshgrid(axis, axis, axis)).reshape(3, -1).T
    points = _points(np.arange(len(xyz)) * 0.001, xyz)

    kept = lidar_pipeline.voxel_downsample(points, 0.5)

    assert len(kept) == len(points)


def test_voxel_downsample_count_matches_hash_oracle(rng: np.random.Generator) -> None:
    """
    arrange: 10 000 random points.
    act: downsample with a 0.5 m leaf.
    assert: the survivor count equals the number of distinct voxels.
    """
    xyz = rng.uniform(-5.0, 5.0, size=(10_000, 3))
    points = _points(np.sort(rng.uniform(0.0, 1.0, size=10_000)), xyz)

    kept = lidar_pipeline.voxel_downsample(points, 0.5)

    voxels = {tuple(key) for key in np.floor(xyz / 0.5).astype(int).tolist()}
    assert len(kept) == len(voxels)
    assert np.all(np.diff(kept.t) >= 0.0)


def test_voxel_downsample_rejects_bad_leaf() -> None:
    """
    arrange: one point.
    act: downsample with a zero leaf.
    assert: a ValueError is raised.
    """
    with pytest.raises(ValueError):
        lidar_pipeline.voxel_downsample(_points([0.0], [[1.0, 2.0, 3.0]]), 0.0)


def test_assemble_batch_stops_at_knot() -> None:
    """
    arrange: LiDAR and IMU measurements around the knot at 0.2 s.
    act: assemble batches with a generous span limit.
    assert: no batch crosses the knot and measurements stay time ordered.
    """
    queue = MeasurementQueue(
        _points([0.195, 0.185, 0.205], np.ones((3, 3))),
        ImuSamples(np.array([0.19, 0.21]), np.zeros((2, 3)), np.zeros((2, 3))),
    )
    grid = KnotGrid(t0=0.0, tau=0.1, n=2)

    first = lidar_pipeline.assemble_batch(queue, 100, 1.0, grid)
    second = lidar_pipeline.assemble_batch(queue, 100, 1.0, grid)
    third = lidar_pipeline.assemble_batch(queue, 100, 1.0, grid)

    np.testing.assert_array_equal(first.lidar.t, [0.185, 0.195])
    np.testing.assert_array_equal(first.imu.t, [0.19])
    assert (second.t_min, second.t_max) == (0.205, 0.21)
    assert len(third) == 0
    assert len(queue) == 0


def test_assemble_batch_limits_count_and_span() -> None:
    """
    arrange: ten LiDAR points 1 ms apart and interleaved IMU samples.
    act: assemble batches of at most three measurements and at most 4 ms.
    assert: the oldest measurements come first within both limits.
    """
    queue = MeasurementQueue(
        _points(0.1 + 0.001 * np.arange(10), np.ones((10, 3))),
        ImuSamples(np.array([0.1005, 0.1015]), np.zeros((2, 3)), np.zeros((2, 3))),
    )
    grid = KnotGrid(t0=0.0, tau=0.1, n=2)

    by_count = lidar_pipeline.assemble_batch(queue, 3, 1.0, grid)
    by_span = lidar_pipeline.assemble_batch(queue, 100, 0.004, grid)
    single = lidar_pipeline.assemble_batch(queue, 1, 1.0, grid)

    np.testing.assert_allclose(by_count.lidar.t, [0.1, 0.101])
    np.testing.assert_allclose(by_count.imu.t, [0.1005])
    np.testing.assert_allclose(by_span.lidar.t, [0.102, 0.103, 0.104, 0.105])
    np.testing.assert_allclose(by_span.imu.t, [0.1015])
    assert len(single) == 1


def test_assemble_batch_empty_queue() -> None:
    """
    arrange: an empty queue.
    act: assemble a batch.
    assert: the batch is empty.
    """
    queue = MeasurementQueue(LidarPoints.empty(), ImuSamples.empty())

    batch = lidar_pipeline.assemble_batch(queue, 10, 0.01, KnotGrid(0.0, 0.1, 2))

    assert len(batch) == 0


def test_assemble_batch_on_knot_times() -> None:
    """
    arrange: 400 Hz IMU samples, many exactly on knots of a grid starting at -2 tau.
    act: assemble batches and advance the grid to the newest sample of each.
    assert: every sample of every batch lies in the active segment.
    """
    tau = 0.01
    times = np.arange(41) * 0.0025
    queue = MeasurementQueue(
        LidarPoints.empty(), ImuSamples(times, np.zeros((41, 3)), np.zeros((41, 3)))
    )
    grid = KnotGrid(t0=-2.0 * tau, tau=tau, n=3)
    batched = 0

    while len(queue):
        batch = lidar_pipeline.assemble_batch(queue, 100, tau, grid)
        while batch.t_max >= grid.knot(grid.n):
            grid = grid.advanced()
        spline.normalized_time(batch.imu.t, grid)
        batched += len(batch)

    assert batched == 41


def test_fit_planes_on_coplanar_neighbors() -> None:
    """
    arrange: five exactly coplanar neighbors on a tilted plane.
    act: fit the plane.
    assert: the rms is zero and the normal is the plane normal up to sign.
    """
    normal = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    neighbors = np.array(
        [[0.0, 0.0, 0.0], [1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0], [2.0, -1.0, -1.0]]
    )

    fit = lidar_pipeline.fit_planes(neighbors[None], np.array([[0.0, 1, 1, 1, 1.5]]), 5, 0.1, 2.0)

    assert fit.rms[0] == pytest.approx(0.0, abs=1e-12)
    assert abs(fit.normal[0] @ normal) == pytest.approx(1.0)
    assert fit.valid[0]


def test_fit_planes_invalid_when_far_or_rough() -> None:
    """
    arrange: a rough neighbor set and a distant neighbor set.
    act: fit both.
    assert: both planes are invalid.
    """
    rough = np.array([[0, 0, 0], [1, 0, 0.5], [0, 1, -0.5], [1, 1, 0.5], [0.5, 0.5, -0.5]])
    flat = rough * np.array([1.0, 1.0, 0.0])

    fit = lidar_pipeline.fit_planes(
        np.stack([rough, flat]).astype(float),
        np.array([[0.0, 1, 1, 1, 1], [0.0, 1, 1, 1, 3]]),
        5,
        0.1,
        2.0,
    )

    np.testing.assert_array_equal(fit.valid, [False, False])


def test_fit_planes_invalid_when_collinear() -> None:
    """
    arrange: five neighbors on a line.
    act: fit a plane.
    assert: the plane is invalid although its rms is zero.
    """
    neighbors = np.outer([0.0, 0.2, -0.2, 0.4, -0.4], [0.0, 0.0, 1.0]) + [5.0, 1.0, 0.0]
    distances = np.array([[0.0, 0.2, 0.2, 0.4, 0.4]])

    fit = lidar_pipeline.fit_planes(neighbors[None], distances, 5, 0.1, 2.0)

    assert fit.rms[0] == pytest.approx(0.0, abs=1e-12)
    assert not fit.valid[0]


def test_associate_on_floor() -> None:
    """
    arrange: a floor map.
    act: associate a point above the floor, alone and batched.
    assert: the plane is the floor, the anchor the nearest floor point.
    """
    local_map = _floor_map()

    fit = lidar_pipeline.associate([0.41, 0.39, 0.3], local_map)
    batch = lidar_pipeline.associate_batch([[0.41, 0.39, 0.3]], local_map)

    assert fit.valid[0]
    assert abs(fit.normal[0, 2]) == pytest.approx(1.0)
    np.testing.assert_allclose(fit.anchor[0], [0.4, 0.4, 0.0], atol=1e-9)
    np.testing.assert_allclose(batch.anchor, fit.anchor)


def test_associate_needs_enough_neighbors() -> None:
    """
    arrange: a map with two points.
    act: associate a point.
    assert: the plane is invalid.
    """
    local_map = LocalMap()
    local_map.insert([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    fit = lidar_pipeline.associate_batch([[0.1, 0.0, 0.0]], local_map)

    assert not fit.valid[0]


def test_point_residual_direct_substitution() -> None:
    """
    arrange: identity pose and extrinsics, plane z = 0.
    act: evaluate the residual of a point 2 m above the sensor.
    assert: the residual is 2 m.
    """
    fit = PlaneFit(np.array([[0.0, 0.0, 1.0]]), np.zeros((1, 3)), np.zeros(1), np.ones(1, bool))

    residual = lidar_pipeline.point_residual(
        _resting_state(), _points([0.15], [[0.0, 0.0, 2.0]]), [Extrinsics()], fit
    )

    np.testing.assert_allclose(residual, [2.0])


def test_point_residual_matches_dot_product_oracle(rng: np.random.Generator) -> None:
    """
    arrange: random states, extrinsics, points and planes.
    act: evaluate the residuals.
    assert: they equal nᵀ(R(t)(R_e p + s_e) + s(t) - ᾱ) evaluated step by step.
    """
    for _ in range(100):
        state = random_spline_state(rng)
        ext = Extrinsics(random_unit_quaternion(rng), rng.normal(size=3))
        points = _points(rng.uniform(0.1, 0.2, size=1), rng.normal(size=(1, 3)) * 5.0)
        fit = _random_fit(rng, 1)

        residual = lidar_pipeline.point_residual(state, points, [ext], fit)

        position, rotation = estimator.interpolate_pose(state, points.t[0])
        p_body = so3_quat.to_rotmat(ext.rotation) @ points.xyz[0] + ext.translation
        p_world = so3_quat.to_rotmat(rotation) @ p_body + position
        assert abs(residual[0] - fit.normal[0] @ (p_world - fit.anchor[0])) < 1e-12


def test_point_jacobian_matches_finite_differences(rng: np.random.Generator) -> None:
    """
    arrange: random states, points and planes.
    act: compare the analytic Jacobian with central finite differences.
    assert: the relative error is below 1e-5 and the bias columns are zero.
    """
    for _ in range(100):
        state = random_spline_state(rng)
        ext = Extrinsics(random_unit_quaternion(rng), rng.normal(size=3))
        points = _points(rng.uniform(0.1, 0.2, size=2), rng.normal(size=(2, 3)) * 5.0)
        fit = _random_fit(rng, 2)

        analytic = lidar_pipeline.point_jacobian(state, points, [ext], fit)
        numeric = numerical_jacobian(
            lambda x, s=state: lidar_pipeline.point_residual(
                s.with_vector(x), points, [ext], fit
            ),
            state.to_vector(),
        )

        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-5
        np.testing.assert_array_equal(analytic[:, 24:30], np.zeros((2, 6)))


def test_point_jacobian_position_block_structure() -> None:
    """
    arrange: a resting state and a point at the segment start.
    act: compute the Jacobian row.
    assert: the position block is nᵀ times the basis weights 1/6, 2/3, 1/6, 0.
    """
    normal = np.array([0.0, 0.6, 0.8])
    fit = PlaneFit(normal[None], np.zeros((1, 3)), np.zeros(1), np.ones(1, bool))

    row = lidar_pipeline.point_jacobian(
        _resting_state(), _points([0.1], [[1.0, 0.0, 0.0]]), [Extrinsics()], fit
    )[0]

    weights = np.array([1.0, 4.0, 1.0, 0.0]) / 6.0
    np.testing.assert_allclose(row[0:12], np.kron(weights, normal), atol=1e-12)


def test_outlier_gate() -> None:
    """
    arrange: a zero Jacobian row and a nonzero one.
    act: gate them with a prior covariance and its tenfold inflation.
    assert: the zero row sees only the noise and the statistic grows with P.
    """
    rows = np.array([[0.0, 0.0], [1.0, 1.0]])
    cov = np.array([[0.02, 0.0], [0.0, 0.01]])

    keep, variance = lidar_pipeline.outlier_gate(rows, cov, 0.001, 0.02)
    keep_inflated, variance_inflated = lidar_pipeline.outlier_gate(rows, 10.0 * cov, 0.001, 0.02)

    np.testing.assert_allclose(variance, [0.001, 0.031])
    np.testing.assert_array_equal(keep, [True, False])
    assert variance_inflated[1] > variance[1]
    np.testing.assert_array_equal(keep_inflated, [True, False])


def test_plane_model_pulls_state_onto_floor() -> None:
    """
    arrange: a floor map, a sensor whose true height is 1 m and a prior at 1.1 m.
    act: update with points measured below the sensor, orientation known.
    assert: the posterior height moves to 1 m.
    """
    local_map = _floor_map()
    cov = np.diag([0.01] * 12 + [1e-10] * 18)
    prior = Gaussian(_resting_state(position=(0.0, 0.0, 1.1)), cov)
    xy = np.array([[0.1, 0.1], [-0.5, 0.3], [0.7, -0.2], [-0.3, -0.6], [0.2, 0.8]])
    points = _points(np.linspace(0.1, 0.19, 5), np.column_stack([xy, -np.ones(5)]))
    model = LidarPlaneModel(points, [Extrinsics()], local_map, prior.cov, sigma=0.001)

    result = estimator.iterated_update(prior, [model])

    positions, _ = estimator.interpolate_pose(result.posterior.mean, np.array([0.15]))
    assert positions[0, 2] == pytest.approx(1.0, abs=1e-3)
    assert np.all(model.kept)


def test_plane_model_rejects_gross_outlier() -> None:
    """
    arrange: a floor map, a correct prior and one point 1 m off the floor.
    act: linearize the model.
    assert: the innovation gate rejects the outlier and keeps the inliers.
    """
    local_map = _floor_map()
    prior = Gaussian(_resting_state(position=(0.0, 0.0, 1.0)), np.eye(30) * 1e-6)
    z = np.array([-1.0, -1.0, -1.0, 0.0])
    points = _points([0.11, 0.12, 0.13, 0.14], np.column_stack([np.full((4, 2), 0.3), z]))
    model = LidarPlaneModel(points, [Extrinsics()], local_map, prior.cov, sigma=0.02)

    lin = model.linearize(prior.mean)

    np.testing.assert_array_equal(model.kept, [True, True, True, False])
    np.testing.assert_array_equal(model.rejected_residual, [False, False, False, True])
    assert lin.residual.shape == (3,)
    assert model.noise_cov().shape == (3,)


def test_plane_model_variance_gate_rejects_uncertain_points() -> None:
    """
    arrange: a floor map, a prior certain in position and uncertain in orientation,
        three points straight below the sensor and one 2.5 m to the side.
    act: linearize the model with the default threshold.
    assert: only the side point, whose residual depends on the orientation, is
        rejected by the variance gate.
    """
    local_map = _floor_map()
    cov = np.diag([1e-8] * 12 + [0.01] * 12 + [1e-8] * 6)
    prior = Gaussian(_resting_state(position=(0.0, 0.0, 1.0)), cov)
    xyz = [[0.0, 0.0, -1.0]] * 3 + [[2.5, 0.0, -1.0]]
    model = LidarPlaneModel(
        _points([0.11, 0.12, 0.13, 0.14], xyz), [Extrinsics()], local_map, prior.cov, sigma=0.02
    )

    lin = model.linearize(prior.mean)

    np.testing.assert_array_equal(model.rejected_variance, [False, False, False, True])
    np.testing.assert_array_equal(model.kept, [True, True, True, False])
    assert lin.residual.shape == (3,)


def test_plane_model_variance_gate_widens_for_uncertain_batch() -> None:
    """
    arrange: a floor map and a prior uncertain in every direction.
    act: linearize a point far above the default threshold.
    assert: the point is kept since the whole batch is equally uncertain.
    """
    local_map = _floor_map()
    prior = Gaussian(_resting_state(position=(0.0, 0.0, 1.0)), np.eye(30) * 10.0)
    model = LidarPlaneModel(
        _points([0.12], [[0.0, 0.0, -1.0]]), [Extrinsics()], local_map, prior.cov, sigma=0.02
    )

    lin = model.linearize(prior.mean)

    assert lin.residual.size == 1
    assert not model.rejected_variance[0]


def test_plane_model_explicit_variance_threshold() -> None:
    """
    arrange: the orientation-uncertain prior and points of the variance gate test.
    act: linearize with an explicit threshold of 1 m².
    assert: every point is kept.
    """
    local_map = _floor_map()
    cov = np.diag([1e-8] * 12 + [0.01] * 12 + [1e-8] * 6)
    prior = Gaussian(_resting_state(position=(0.0, 0.0, 1.0)), cov)
    xyz = [[0.0, 0.0, -1.0]] * 3 + [[2.5, 0.0, -1.0]]
    model = LidarPlaneModel(
        _points([0.11, 0.12, 0.13, 0.14], xyz),
        [Extrinsics()],
        local_map,
        prior.cov,
        sigma=0.02,
        outlier_threshold=1.0,
    )

    lin = model.linearize(prior.mean)

    assert lin.residual.shape == (4,)
    assert not model.rejected_variance.any()


def test_plane_model_gates_points_when_they_first_find_a_plane() -> None:
    """
    arrange: a floor map, an inlier and a point 1 m above the floor.
    act: linearize at an iterate far from the map, then at the true pose.
    assert: nothing is gated without planes; at the true pose the raised point is
        rejected by the innovation gate and the inlier is kept.
    """
    local_map = _floor_map()
    cov = np.eye(30) * 1e-6
    points = _points([0.12, 0.13], [[0.3, 0.3, -1.0], [0.3, 0.3, 0.0]])
    model = LidarPlaneModel(points, [Extrinsics()], local_map, cov, sigma=0.02)

    far = model.linearize(_resting_state(position=(20.0, 0.0, 1.0)))
    near = model.linearize(_resting_state(position=(0.0, 0.0, 1.0)))

    assert far.residual.size == 0
    assert near.residual.size == 1
    np.testing.assert_array_equal(model.kept, [True, False])
    np.testing.assert_array_equal(model.rejected_residual, [False, True])
    assert not model.rejected_variance.any()



def test_plane_model_on_empty_map() -> None:
    """
    arrange: an empty map.
    act: linearize the model.
    assert: no measurement rows are produced.
    """
    prior = Gaussian(_resting_state(), np.eye(30))
    model = LidarPlaneModel(
        _points([0.12], [[0.0, 0.0, -1.0]]), [Extrinsics()], LocalMap(), prior.cov, sigma=0.02
    )

    assert model.linearize(prior.mean).jacobian.shape == (0, 30)


def test_map_maintainer_inserts_idle_segments_once() -> None:
    """
    arrange: pending points in the first and the second segment of a resting trajectory.
    act: make the first segment idle, maintain twice, then flush.
    assert: points are inserted once each, in the world frame, when their segment is idle.
    """
    state = _resting_state(position=(1.0, 2.0, 3.0))
    history = SplineHistory.from_state(state)
    local_map = LocalMap()
    maintainer = MapMaintainer(local_map, [Extrinsics()], keep_global=True)
    maintainer.add(_points([0.15, 0.25], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    noise = ProcessNoise(0.0, 0.0)
    belief = estimator.predict(Gaussian(state, np.zeros((30, 30))), 0.55, noise, history.retire)

    first = maintainer.maintain(history)
    again = maintainer.maintain(history)
    flushed = maintainer.flush(history, belief.mean)

    assert (first, again, flushed) == (1, 0, 1)
    np.testing.assert_allclose(local_map.points, [[2.0, 2.0, 3.0], [1.0, 3.0, 3.0]], atol=1e-12)
    assert maintainer.global_map.shape == (2, 3)


def test_map_maintainer_skips_points_below_watermark() -> None:
    """
    arrange: a maintainer whose watermark is 0.2 s.
    act: add an older point and flush.
    assert: the older point is never inserted.
    """
    state = _resting_state()
    history = SplineHistory.from_state(state)
    maintainer = MapMaintainer(LocalMap(), [Extrinsics()], watermark=0.2)
    maintainer.add(_points([0.15], [[1.0, 0.0, 0.0]]))

    assert maintainer.flush(history, state) == 0
    assert maintainer.global_map.shape == (0, 3)
