# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Absolute position error and runtime efficiency of odometry runs."""

import logging
import typing

import numpy as np
import numpy.typing as npt

import so3_quat
from exceptions import NoTemporalOverlapError
from resple_types import RuntimeSummary, Trajectory

logger = logging.getLogger(__name__)

Alignment = typing.Literal["none", "se3"]


def interpolate_trajectory(trajectory: Trajectory, t: npt.ArrayLike) -> Trajectory:
    """Interpolate a trajectory at times inside its span.

    Positions are interpolated linearly and orientations spherically.

    Args:
        trajectory: the trajectory, at least two poses.
        t: strictly increasing query times inside ``[t_first, t_last]``.

    Returns:
        The interpolated trajectory.
    """
    t = np.asarray(t, dtype=float)
    upper = np.clip(np.searchsorted(trajectory.t, t, side="right"), 1, len(trajectory) - 1)
    lower = upper - 1
    fraction = (t - trajectory.t[lower]) / (trajectory.t[upper] - trajectory.t[lower])
    position = trajectory.position[lower] + fraction[:, None] * (
        trajectory.position[upper] - trajectory.position[lower]
    )
    orientation = so3_quat.slerp(
        trajectory.orientation[lower], trajectory.orientation[upper], fraction
    )
    return Trajectory(t=t, position=position, orientation=orientation)


def align_rigid(
    source: npt.NDArray[np.float64], target: npt.NDArray[np.float64]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Closed-form rotation and translation minimising ``Σ |R source + t - target|²``.

    Args:
        source: points of shape (m, 3).
        target: corresponding points of shape (m, 3).

    Returns:
        The rotation matrix and translation vector.
    """
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    covariance = (target - target_mean).T @ (source - source_mean)
    u, _, vh = np.linalg.svd(covariance)
    reflection = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vh)) or 1.0])
    rotation = u @ reflection @ vh
    return rotation, target_mean - rotation @ source_mean


def position_errors(
    est: Trajectory, gt: Trajectory, align: Alignment = "none"
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Position errors of an estimate at the ground-truth timestamps.

    Args:
        est: the estimated trajectory.
        gt: the ground-truth trajectory.
        align: ``se3`` rigidly aligns the estimate to the ground truth first.

    Returns:
        The ground-truth timestamps inside the estimate's span and the error
        vectors in meters, shape (m, 3).

    Raises:
        NoTemporalOverlapError: if no ground-truth pose lies inside the estimate's span.
        ValueError: if the alignment is unknown.
    """
    if align not in ("none", "se3"):
        raise ValueError(f"unknown alignment {align}")
    if len(est) < 2:
        raise NoTemporalOverlapError("the estimate needs at least two poses")
    inside = (gt.t >= est.t[0]) & (gt.t <= est.t[-1])
    if not np.any(inside):
        raise NoTemporalOverlapError(
            f"no ground-truth pose inside the estimate span [{est.t[0]:.3f}, {est.t[-1]:.3f}]"
        )
    t = gt.t[inside]
    estimate = interpolate_trajectory(est, t).position
    truth = gt.position[inside]
    if align == "se3":
        rotation, translation = align_rigid(estimate, truth)
        estimate = estimate @ rotation.T + translation
    return t, estimate - truth


def evaluate_ape(est: Trajectory, gt: Trajectory, align: Alignment = "none") -> float:
    """Root mean square of the absolute position error.

    Args:
        est: the estimated trajectory.
        gt: the ground-truth trajectory.
        align: ``none`` compares in the shared world frame, ``se3`` aligns first.

    Returns:
        The APE RMSE in meters.
    """
    t, errors = position_errors(est, gt, align)
    rmse = float(np.sqrt(np.mean(np.sum(errors**2, axis=-1))))
    logger.debug("ape rmse %.6f m over %d poses", rmse, t.size)
    return rmse


def report_runtime(per_batch_times: typing.Sequence[float], batch_span: float) -> RuntimeSummary:
    """Summarise per-batch processing times.

    Args:
        per_batch_times: processing time of every batch in seconds.
        batch_span: time available per batch in seconds.

    Returns:
        The runtime efficiency ``mean / batch_span`` and the time statistics.

    Raises:
        ValueError: if there are no times or the span is not positive.
    """
    times = np.asarray(per_batch_times, dtype=float)
    if not times.size:
        raise ValueError("runtime report needs at least one batch time")
    if not batch_span > 0.0:
        raise ValueError(f"batch span must be positive, got {batch_span}")
    mean = float(np.mean(times))
    return RuntimeSummary(
        xi=mean / batch_span,
        mean=mean,
        p50=float(np.percentile(times, 50)),
        p95=float(np.percentile(times, 95)),
        max=float(np.max(times)),
    )
