# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Deterministic synthetic scenes for the odometry pipeline.

A smooth ground-truth trajectory is generated as a cumulative B-spline on its
own knot grid, which is deliberately not commensurate with the estimator's.
LiDAR rays are cast from the pose interpolated at each ray's own timestamp into
a world of bounded planar patches, and IMU readings are synthesised from the
same spline. Only the spline module is shared with the estimator.
"""

import dataclasses
import functools
import logging
import typing

import numpy as np
import numpy.typing as npt

import so3_quat
import spline
from constants import WORLD_UP
from resple_types import ImuSamples, LidarPoints, Trajectory
from run_config import RunConfig

logger = logging.getLogger(__name__)

TRUTH_KNOT_INTERVAL = 1.0 / 37.0
PEAK_SAMPLE_RATE = 1000.0
START_REST = 0.5
START_RAMP = 1.0
RANGE_FLOOR = 0.1
RAY_CHUNK = 100_000

Seed = int | np.random.SeedSequence
PatchSpec = tuple[npt.ArrayLike, npt.ArrayLike, npt.ArrayLike, npt.ArrayLike]


class DynamicsProfile(typing.NamedTuple):
    """Motion level of a generated trajectory.

    Attrs:
        peak_speed: largest sampled speed in m/s.
        peak_rate: largest sampled angular rate in rad/s.
        frequencies: range of the motion frequencies in Hz.
    """

    peak_speed: float
    peak_rate: float
    frequencies: tuple[float, float]


DYNAMICS = {
    "low": DynamicsProfile(peak_speed=0.8, peak_rate=0.4, frequencies=(0.15, 0.4)),
    "high": DynamicsProfile(peak_speed=3.5, peak_rate=3.5, frequencies=(0.5, 1.5)),
}


class TruthSample(typing.NamedTuple):
    """Ground-truth kinematics at a set of times.

    Attrs:
        position: positions in meters, shape (m, 3).
        orientation: unit quaternions, w-first, shape (m, 4).
        velocity: world-frame velocities in m/s, shape (m, 3).
        acceleration: world-frame accelerations in m/s², shape (m, 3).
        angular_velocity: body-frame angular rates in rad/s, shape (m, 3).
    """

    position: npt.NDArray[np.float64]
    orientation: npt.NDArray[np.float64]
    velocity: npt.NDArray[np.float64]
    acceleration: npt.NDArray[np.float64]
    angular_velocity: npt.NDArray[np.float64]


@dataclasses.dataclass(frozen=True)
class TruthSpline:
    """Dense cumulative B-spline ground truth.

    Control point ``j`` sits on knot ``j + 1``; segment ``k`` covers
    ``[t_{k-1}, t_k)`` and uses control points ``k-3 .. k``. Orientation control
    points are ``Q_j = Q_{j-1} • Exp(δ_j)`` starting from ``Q_{-1} = r_base``.

    Attrs:
        t0: time of knot 0 in seconds.
        tau: knot interval in seconds.
        positions: position control points, shape (N, 3).
        deltas: orientation increments, shape (N, 3).
        r_base: orientation before the first increment, w-first.
        seed: seed the spline was generated from.
    """

    t0: float
    tau: float
    positions: npt.NDArray[np.float64]
    deltas: npt.NDArray[np.float64]
    r_base: npt.NDArray[np.float64]
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the control points.

        Raises:
            ValueError: if the control points are inconsistent.
        """
        if not self.tau > 0.0:
            raise ValueError(f"knot interval must be positive, got {self.tau}")
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or len(self.positions) < 4:
            raise ValueError("a truth spline needs at least 4 position control points")
        if self.deltas.shape != self.positions.shape:
            raise ValueError("a truth spline needs one increment per control point")
        if np.any(np.linalg.norm(self.deltas, axis=-1) >= np.pi):
            raise ValueError("orientation increments must have magnitude below pi")

    @functools.cached_property
    def anchors(self) -> npt.NDArray[np.float64]:
        """Cumulative orientations ``Q_{-1} .. Q_{N-1}``, shape (N + 1, 4)."""
        factors = so3_quat.exp_at_identity(self.deltas)
        anchors = [so3_quat.normalize(self.r_base)]
        for factor in factors:
            anchors.append(so3_quat.hamilton_product(anchors[-1], factor))
        return np.stack(anchors)

    def knot(self, index: int) -> float:
        """Return the time of a knot."""
        return self.t0 + index * self.tau

    @property
    def span(self) -> tuple[float, float]:
        """Time span ``[t_2, t_{N-1})`` covered by complete segments."""
        return self.knot(2), self.knot(len(self.positions) - 1)

    def _segment_index(self, t: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
        """Segment of every time; times outside the span extrapolate the outer segments."""
        k = np.floor((t - self.t0) / self.tau).astype(np.int64) + 1
        return np.clip(k, 3, len(self.positions) - 1)

    def sample(self, t: npt.ArrayLike) -> TruthSample:
        """Evaluate the full kinematics at the given times.

        Args:
            t: times in seconds, shape (m,).

        Returns:
            The kinematics of every time.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = self._segment_index(t)
        columns = {
            "position": np.empty((t.size, 3)),
            "orientation": np.empty((t.size, 4)),
            "velocity": np.empty((t.size, 3)),
            "acceleration": np.empty((t.size, 3)),
            "angular_velocity": np.empty((t.size, 3)),
        }
        for segment in np.unique(k):
            mask = k == segment
            u = (t[mask] - self.knot(int(segment) - 1)) / self.tau
            pos_seg = spline.PositionSegment(points=self.positions[segment - 3 : segment + 1])
            ori_seg = spline.OrientationSegment(
                r_base=self.anchors[segment - 3], deltas=self.deltas[segment - 3 : segment + 1]
            )
            columns["position"][mask] = spline.position_eval(pos_seg, u)
            columns["velocity"][mask] = spline.position_eval(pos_seg, u, self.tau, order=1)
            columns["acceleration"][mask] = spline.position_eval(pos_seg, u, self.tau, order=2)
            columns["orientation"][mask] = spline.orientation_eval(ori_seg, u)
            columns["angular_velocity"][mask] = spline.angular_velocity(ori_seg, u, self.tau)
        return TruthSample(**columns)

    def pose(
        self, t: npt.ArrayLike
    ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Return positions and unit quaternions at the given times."""
        sample = self.sample(t)
        return sample.position, sample.orientation

    def trajectory(self, t: npt.ArrayLike) -> Trajectory:
        """Sample the ground truth as a trajectory."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        position, orientation = self.pose(t)
        return Trajectory(t=t, position=position, orientation=orientation)


def _sum_of_sines(
    rng: np.random.Generator, frequencies: tuple[float, float], components: int = 4
) -> tuple[npt.NDArray[np.float64], ...]:
    """Draw amplitudes, angular frequencies and phases of a 3-axis sum of sines."""
    freq = rng.uniform(*frequencies, size=(components, 3))
    omega = 2.0 * np.pi * freq
    amplitude = rng.uniform(0.5, 1.0, size=(components, 3)) / omega
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(components, 3))
    return amplitude, omega, phase


def _start_envelope(t: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Smoothstep from 0 to 1 over the start ramp, 0 while the rig rests."""
    x = np.clip((t - START_REST) / START_RAMP, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _evaluate_sines(
    coefficients: tuple[npt.NDArray[np.float64], ...], t: npt.NDArray[np.float64], order: int = 0
) -> npt.NDArray[np.float64]:
    """Evaluate a sum of sines or its second derivative at times ``t``, shape (m, 3)."""
    amplitude, omega, phase = coefficients
    values = np.sin(t[:, None, None] * omega + phase) * amplitude
    if order == 2:
        values = -values * omega**2
    return values.sum(axis=1)


def gen_truth(
    seed: int, duration: float, dynamics: typing.Literal["low", "high"] = "low"
) -> TruthSpline:
    """Generate a random smooth ground-truth trajectory starting at rest at the origin.

    Positions and angular rates are sums of sines, rescaled until the peaks sampled
    at 1 kHz match the dynamics level. The rig rests for ``START_REST`` seconds,
    the window the IMU gravity alignment expects, then the motion fades in over
    ``START_RAMP`` seconds.

    Args:
        seed: random seed.
        duration: length of the trajectory in seconds.
        dynamics: motion level.

    Returns:
        The truth spline, covering ``[0, duration]``.

    Raises:
        ValueError: if the duration is not positive.
    """
    if not duration > 0.0:
        raise ValueError(f"trajectory duration must be positive, got {duration}")
    profile = DYNAMICS[dynamics]
    rng = np.random.default_rng(seed)
    tau = TRUTH_KNOT_INTERVAL
    t0 = -2.0 * tau
    # peaks are measured past the start ramp even for short sequences
    horizon = max(duration, START_REST + 2.0 * START_RAMP)
    count = int(np.ceil(horizon / tau)) + 6
    centers = t0 + (np.arange(count) + 1) * tau

    motion = _sum_of_sines(rng, profile.frequencies)
    rate = _sum_of_sines(rng, profile.frequencies)
    yaw = rng.uniform(-np.pi, np.pi)

    # cubic quasi-interpolation: control point = p(c) - tau² p''(c) / 6
    positions = _evaluate_sines(motion, centers) - tau**2 / 6.0 * _evaluate_sines(
        motion, centers, order=2
    )
    positions -= _evaluate_sines(motion, np.zeros(1))
    # a segment depends on control points up to two intervals ahead
    positions *= _start_envelope(centers - 2.0 * tau)[:, None]
    positions[:, 2] *= 0.5
    deltas = tau * _evaluate_sines(rate, centers - 0.5 * tau)
    deltas *= _start_envelope(centers - 2.5 * tau)[:, None]
    r_base = so3_quat.exp_at_identity([0.0, 0.0, yaw])

    peak_times = np.arange(0.0, horizon, 1.0 / PEAK_SAMPLE_RATE)
    truth = TruthSpline(t0, tau, positions, deltas, r_base, seed)
    sample = truth.sample(peak_times)
    positions = positions * profile.peak_speed / np.max(np.linalg.norm(sample.velocity, axis=-1))
    for _ in range(5):
        peak = np.max(np.linalg.norm(sample.angular_velocity, axis=-1))
        deltas = deltas * profile.peak_rate / peak
        truth = TruthSpline(t0, tau, positions, deltas, r_base, seed)
        sample = truth.sample(peak_times)
    logger.debug(
        "generated %s dynamics truth over %.1f s with %d control points", dynamics, duration, count
    )
    return truth


@dataclasses.dataclass(frozen=True)
class PlaneWorld:
    """Bounded planar patches.

    A patch holds the points ``c + a u + b v`` with ``|a| <= half_u`` and
    ``|b| <= half_v``; infinite half extents give unbounded planes.

    Attrs:
        centers: patch centers in meters, shape (P, 3).
        normals: unit normals, shape (P, 3).
        u_axes: unit in-plane axes, shape (P, 3).
        v_axes: unit in-plane axes ``normal × u``, shape (P, 3).
        half_extents: half extents along u and v in meters, shape (P, 2).
    """

    centers: npt.NDArray[np.float64]
    normals: npt.NDArray[np.float64]
    u_axes: npt.NDArray[np.float64]
    v_axes: npt.NDArray[np.float64]
    half_extents: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate the patches.

        Raises:
            ValueError: if a normal is not unit or a patch is degenerate.
        """
        if np.any(np.abs(np.linalg.norm(self.normals, axis=-1) - 1.0) > 1e-9):
            raise ValueError("patch normals must be unit vectors")
        if np.any(~(self.half_extents > 0.0)):
            raise ValueError("patch half extents must be positive")

    @classmethod
    def from_patches(
        cls, patches: typing.Sequence[PatchSpec]
    ) -> "PlaneWorld":
        """Build a world from ``(center, normal, u_axis, (half_u, half_v))`` tuples.

        Normals are normalised and the u axes projected into their planes.

        Args:
            patches: the patch descriptions.

        Returns:
            The world.

        Raises:
            ValueError: if a normal is zero or a u axis parallel to its normal.
        """
        centers, normals, u_axes, half_extents = (
            np.asarray([patch[i] for patch in patches], dtype=float) for i in range(4)
        )
        norms = np.linalg.norm(normals, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("patch normals must be non-zero")
        normals = normals / norms
        u_axes = u_axes - np.sum(u_axes * normals, axis=-1, keepdims=True) * normals
        u_norms = np.linalg.norm(u_axes, axis=-1, keepdims=True)
        if np.any(u_norms < 1e-9):
            raise ValueError("patch u axes must not be parallel to their normals")
        u_axes = u_axes / u_norms
        return cls(centers, normals, u_axes, np.cross(normals, u_axes), half_extents)

    def __len__(self) -> int:
        """Return the number of patches."""
        return int(self.centers.shape[0])

    def intersect(
        self, origins: npt.NDArray[np.float64], directions: npt.NDArray[np.float64]
    ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
        """Cast rays against every patch.

        Args:
            origins: ray origins, shape (m, 3).
            directions: unit ray directions, shape (m, 3).

        Returns:
            Distances to the nearest hit (infinite for misses) and the hit patch
            indices (-1 for misses).
        """
        denom = directions @ self.normals.T
        offset = np.sum(self.normals * self.centers, axis=-1)[None, :] - origins @ self.normals.T
        facing = np.abs(denom) > 1e-12
        distance = np.divide(offset, denom, out=np.zeros_like(offset), where=facing)
        hit = origins[:, None, :] + distance[..., None] * directions[:, None, :]
        relative = hit - self.centers[None]
        along_u = np.einsum("mpi,pi->mp", relative, self.u_axes)
        along_v = np.einsum("mpi,pi->mp", relative, self.v_axes)
        valid = facing & (distance > 1e-9)
        valid &= np.abs(along_u) <= self.half_extents[:, 0]
        valid &= np.abs(along_v) <= self.half_extents[:, 1]
        distance = np.where(valid, distance, np.inf)
        nearest = np.argmin(distance, axis=-1)
        ranges = distance[np.arange(len(origins)), nearest]
        return ranges, np.where(np.isfinite(ranges), nearest, -1)

    def plane_distance(self, points: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Distance of each point to the nearest supporting plane of any patch."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        signed = points[:, None, :] - self.centers[None]
        return np.min(np.abs(np.einsum("mpi,pi->mp", signed, self.normals)), axis=-1)


def default_world() -> PlaneWorld:
    """A closed 12 x 12 x 8 m room around the origin with three slanted interior patches."""
    room = [
        ((0.0, 0.0, -2.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (6.0, 6.0)),
        ((0.0, 0.0, 6.0), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (6.0, 6.0)),
        ((6.0, 0.0, 2.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (6.0, 4.0)),
        ((-6.0, 0.0, 2.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (6.0, 4.0)),
        ((0.0, 6.0, 2.0), (0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (6.0, 4.0)),
        ((0.0, -6.0, 2.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (6.0, 4.0)),
    ]
    interior = [
        ((4.0, -4.0, -0.5), (-1.0, 1.0, 1.0), (1.0, 1.0, 0.0), (1.5, 1.0)),
        ((-4.0, 3.5, 0.5), (1.0, -0.3, 0.5), (0.0, 0.0, 1.0), (1.2, 1.5)),
        ((3.5, 4.0, 3.0), (-0.4, -1.0, -0.6), (1.0, 0.0, 0.0), (1.5, 1.2)),
    ]
    return PlaneWorld.from_patches(room + interior)


@dataclasses.dataclass(frozen=True)
class ScanPattern:
    """Cyclic sequence of sensor-frame ray directions fired at a constant rate.

    Attrs:
        directions: unit ray directions of one cycle, shape (R, 3).
        rate: points per second.
    """

    directions: npt.NDArray[np.float64]
    rate: float

    def __post_init__(self) -> None:
        """Validate the pattern.

        Raises:
            ValueError: if a ray is not unit or the rate is not positive.
        """
        if not self.rate > 0.0:
            raise ValueError(f"scan rate must be positive, got {self.rate}")
        if np.any(np.abs(np.linalg.norm(self.directions, axis=-1) - 1.0) > 1e-9):
            raise ValueError("scan directions must be unit vectors")


def spinning_pattern(
    rate: float = 20_000.0,
    rings: int = 32,
    revolution_hz: float = 10.0,
    elevation: tuple[float, float] = (-30.0, 30.0),
) -> ScanPattern:
    """A spinning multi-ring LiDAR firing every ring per azimuth column.

    Args:
        rate: points per second.
        rings: number of laser rings.
        revolution_hz: revolutions per second.
        elevation: lowest and highest ring elevation in degrees.

    Returns:
        The scan pattern of one revolution.
    """
    columns = max(int(round(rate / revolution_hz / rings)), 1)
    azimuth = np.linspace(0.0, 2.0 * np.pi, columns, endpoint=False)
    pitch = np.radians(np.linspace(*elevation, rings))
    azimuth, pitch = np.meshgrid(azimuth, pitch, indexing="ij")
    directions = np.stack(
        [np.cos(pitch) * np.cos(azimuth), np.cos(pitch) * np.sin(azimuth), np.sin(pitch)], axis=-1
    ).reshape(-1, 3)
    return ScanPattern(directions=directions, rate=rate)


def repetitive_pattern(
    rate: float = 20_000.0, count: int = 4000, half_angle: float = 35.0
) -> ScanPattern:
    """A forward-looking golden-angle spiral covering a cone around the sensor x axis.

    Args:
        rate: points per second.
        count: rays per cycle.
        half_angle: cone half angle in degrees.

    Returns:
        The scan pattern of one cycle.
    """
    index = np.arange(count)
    off_axis = np.radians(half_angle) * np.sqrt((index + 0.5) / count)
    around = index * np.pi * (3.0 - np.sqrt(5.0))
    directions = np.stack(
        [
            np.cos(off_axis),
            np.sin(off_axis) * np.cos(around),
            np.sin(off_axis) * np.sin(around),
        ],
        axis=-1,
    )
    return ScanPattern(directions=directions, rate=rate)


def raycast(  # pylint: disable=too-many-arguments,too-many-locals
    world: PlaneWorld,
    truth: TruthSpline,
    pattern: ScanPattern,
    sigma: float = 0.0,
    seed: Seed = 0,
    t_start: float = 0.0,
    duration: float | None = None,
    rotation: npt.ArrayLike = so3_quat.IDENTITY,
    translation: npt.ArrayLike = (0.0, 0.0, 0.0),
    sensor_id: int = 0,
    outlier_ratio: float = 0.0,
) -> tuple[LidarPoints, npt.NDArray[np.bool_]]:
    """Simulate one LiDAR stream.

    Every ray is cast from the truth pose at its own timestamp. Misses are
    dropped; hits get Gaussian range noise along the ray, and a random fraction
    is displaced by 0.5 to 2 m to form labelled gross outliers.

    Args:
        world: the scene.
        truth: the ground-truth trajectory.
        pattern: the scan pattern.
        sigma: range noise std in meters.
        seed: random seed.
        t_start: time of the first ray in seconds.
        duration: scan length in seconds; defaults to the rest of the truth span.
        rotation: sensor-to-body rotation, w-first.
        translation: sensor origin in the body frame in meters.
        sensor_id: id written into the points.
        outlier_ratio: probability of a hit becoming a gross outlier.

    Returns:
        Sensor-frame points with their timestamps and the outlier labels.
    """
    if duration is None:
        duration = truth.span[1] - t_start
    count = int(np.floor(duration * pattern.rate))
    times = t_start + np.arange(count) / pattern.rate
    rays = pattern.directions[np.arange(count) % len(pattern.directions)]
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, count) if sigma > 0.0 else np.zeros(count)
    outlier = rng.random(count) < outlier_ratio
    offsets = rng.uniform(0.5, 2.0, count) * rng.choice([-1.0, 1.0], count)

    rotation = so3_quat.normalize(rotation)
    ranges = np.empty(count)
    for start in range(0, count, RAY_CHUNK):
        chunk = slice(start, start + RAY_CHUNK)
        position, orientation = truth.pose(times[chunk])
        origins = position + so3_quat.rotate(orientation, translation)
        directions = so3_quat.rotate(orientation, so3_quat.rotate(rotation, rays[chunk]))
        ranges[chunk] = world.intersect(origins, directions)[0]

    hit = np.isfinite(ranges)
    offsets = np.where(ranges + offsets > RANGE_FLOOR, offsets, np.abs(offsets))
    measured = ranges + noise + np.where(outlier, offsets, 0.0)
    measured = np.maximum(measured, RANGE_FLOOR)
    points = LidarPoints(
        t=times[hit],
        xyz=measured[hit, None] * rays[hit],
        sensor_id=np.full(int(np.count_nonzero(hit)), sensor_id, dtype=np.int64),
    )
    logger.debug("lidar %d: %d of %d rays hit the world", sensor_id, len(points), count)
    return points, outlier[hit]


def synth_imu(  # pylint: disable=too-many-arguments
    truth: TruthSpline,
    rate: float,
    b_acc: npt.ArrayLike = (0.0, 0.0, 0.0),
    b_gyro: npt.ArrayLike = (0.0, 0.0, 0.0),
    sigma_acc: float = 0.0,
    sigma_gyro: float = 0.0,
    gravity: npt.ArrayLike = 9.81 * WORLD_UP,
    seed: Seed = 0,
    t_start: float = 0.0,
    duration: float | None = None,
) -> ImuSamples:
    """Synthesise accelerometer and gyroscope readings on the truth spline.

    Args:
        truth: the ground-truth trajectory.
        rate: sample rate in Hz.
        b_acc: accelerometer bias in m/s².
        b_gyro: gyroscope bias in rad/s.
        sigma_acc: accelerometer noise std in m/s².
        sigma_gyro: gyroscope noise std in rad/s.
        gravity: world-frame gravity term ``g`` of ``acc = Rᵀ (s̈ + g) + b_acc``.
        seed: random seed.
        t_start: time of the first sample in seconds.
        duration: stream length in seconds; defaults to the rest of the truth span.

    Returns:
        The IMU samples.

    Raises:
        ValueError: if the rate is not positive.
    """
    if not rate > 0.0:
        raise ValueError(f"imu rate must be positive, got {rate}")
    if duration is None:
        duration = truth.span[1] - t_start
    times = t_start + np.arange(int(np.floor(duration * rate))) / rate
    sample = truth.sample(times)
    rng = np.random.default_rng(seed)
    specific_force = sample.acceleration + np.asarray(gravity, dtype=float)
    acc = np.einsum("mji,mj->mi", so3_quat.to_rotmat(sample.orientation), specific_force)
    acc = acc + np.asarray(b_acc, dtype=float) + rng.normal(0.0, 1.0, acc.shape) * sigma_acc
    gyro = sample.angular_velocity + np.asarray(b_gyro, dtype=float)
    gyro = gyro + rng.normal(0.0, 1.0, gyro.shape) * sigma_gyro
    return ImuSamples(t=times, acc=acc, gyro=gyro)


class InitialSplineFit(typing.NamedTuple):
    """Control points of an estimator spline reproducing the truth near its start.

    Attrs:
        pos_rcp: position control points, shape (4, 3).
        anchor: orientation anchor, w-first.
        ori_deltas: orientation increments, shape (4, 3).
    """

    pos_rcp: npt.NDArray[np.float64]
    anchor: npt.NDArray[np.float64]
    ori_deltas: npt.NDArray[np.float64]


def fit_initial_state(truth: TruthSpline, t_start: float, tau: float) -> InitialSplineFit:
    """Fit the first estimator segment ``[t_start, t_start + tau)`` to the truth.

    Position control points come from cubic quasi-interpolation of the truth;
    orientations are interpolated the same way in the tangent space at
    ``t_start``.

    Args:
        truth: the ground-truth trajectory.
        t_start: start of the first estimator segment in seconds.
        tau: estimator knot interval in seconds.

    Returns:
        The fitted control points.
    """
    centers = t_start + (np.arange(4) - 1.0) * tau
    sample = truth.sample(centers)
    pos_rcp = sample.position - tau**2 / 6.0 * sample.acceleration

    _, reference = truth.pose([t_start])
    step = tau / 10.0

    def tangent(t: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        orientation = truth.pose(t)[1]
        relative = so3_quat.hamilton_product(so3_quat.conjugate(reference), orientation)
        return so3_quat.log_at_identity(relative)

    curvature = (tangent(centers + step) - 2.0 * tangent(centers) + tangent(centers - step)) / (
        step**2
    )
    phi = tangent(centers) - tau**2 / 6.0 * curvature
    phi = np.concatenate([[2.0 * phi[0] - phi[1]], phi])
    control = so3_quat.hamilton_product(reference, so3_quat.exp_at_identity(phi))
    ori_deltas = so3_quat.log_at_identity(
        so3_quat.hamilton_product(so3_quat.conjugate(control[:-1]), control[1:])
    )
    return InitialSplineFit(pos_rcp=pos_rcp, anchor=control[0], ori_deltas=ori_deltas)


@dataclasses.dataclass(frozen=True)
class Scene:
    """A simulated sequence.

    Attrs:
        truth: the ground-truth trajectory.
        lidar: one point stream per simulated LiDAR.
        outliers: gross-outlier labels of every LiDAR stream.
        imu: the IMU samples.
        ground_truth: the truth sampled at the ground-truth rate.
        config: the run configuration, its initial state set to the truth.
    """

    truth: TruthSpline
    lidar: list[LidarPoints]
    outliers: list[npt.NDArray[np.bool_]]
    imu: ImuSamples
    ground_truth: Trajectory
    config: RunConfig


def simulate_scene(config: RunConfig, world: PlaneWorld | None = None) -> Scene:
    """Simulate every stream a run configuration consumes.

    One LiDAR stream is simulated per sensor the mode expects, using the
    configured extrinsics. The returned configuration starts the estimator from
    the true state at time 0.

    Args:
        config: the run configuration; its ``simulator`` section drives the scene.
        world: the scene geometry, the default room when unset.

    Returns:
        The simulated scene.
    """
    sim = config.simulator
    world = default_world() if world is None else world
    truth = gen_truth(config.seed, sim.duration + 1.0, sim.dynamics)
    pattern = (
        spinning_pattern(rate=sim.point_rate)
        if sim.pattern == "spinning"
        else repetitive_pattern(rate=sim.point_rate)
    )
    lidar_seed, imu_seed = np.random.SeedSequence(config.seed).spawn(2)
    lidar, outliers = [], []
    for extrinsic, stream_seed in zip(
        config.extrinsics[: config.lidar_count], lidar_seed.spawn(config.lidar_count)
    ):
        points, labels = raycast(
            world,
            truth,
            pattern,
            sigma=sim.lidar_sigma,
            seed=stream_seed,
            duration=sim.duration,
            rotation=extrinsic.rotation,
            translation=extrinsic.translation,
            sensor_id=extrinsic.sensor_id,
            outlier_ratio=sim.outlier_ratio,
        )
        lidar.append(points)
        outliers.append(labels)
    imu = synth_imu(
        truth,
        sim.imu_rate,
        b_acc=sim.bias_acc,
        b_gyro=sim.bias_gyro,
        sigma_acc=sim.imu_sigma_acc,
        sigma_gyro=sim.imu_sigma_gyro,
        gravity=config.imu.gravity_magnitude * WORLD_UP,
        seed=imu_seed,
        duration=sim.duration,
    )
    gt_times = np.arange(int(np.floor(sim.duration * sim.ground_truth_rate))) / (
        sim.ground_truth_rate
    )
    fit = fit_initial_state(truth, 0.0, config.knot_interval)
    values = config.dict()
    values["init"].update(
        start_time=0.0,
        position=tuple(fit.pos_rcp[1].tolist()),
        orientation=tuple(fit.anchor.tolist()),
        rcp_positions=fit.pos_rcp.tolist(),
        rcp_deltas=fit.ori_deltas.tolist(),
    )
    logger.info(
        "simulated %d lidar streams with %d points and %d imu samples over %.1f s",
        len(lidar),
        sum(len(points) for points in lidar),
        len(imu),
        sim.duration,
    )
    return Scene(
        truth=truth,
        lidar=lidar,
        outliers=outliers,
        imu=imu,
        ground_truth=truth.trajectory(gt_times),
        config=RunConfig(**values),
    )
