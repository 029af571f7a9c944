# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""IMU measurement model on the spline state.

Accelerometer and gyroscope readings are predicted directly from the
interpolated spline kinematics at each sample timestamp:
``acc = R(t)ᵀ (s̈(t) + g) + b_acc`` and ``gyro = ω(t) + b_gyro``.
"""

import logging

import numpy as np
import numpy.typing as npt

import so3_quat
import spline
from constants import (
    BIAS_ACC_BLOCK,
    BIAS_GYRO_BLOCK,
    GRAVITY_MAGNITUDE,
    MAX_ACC_NORM,
    MAX_GYRO_NORM,
    ORIENTATION_BLOCK,
    POSITION_BLOCK,
    WORLD_UP,
)
from estimator import MeasurementModel, SplineState, gravity_align
from resple_types import ImuSamples

logger = logging.getLogger(__name__)


def gravity_vector(magnitude: float = GRAVITY_MAGNITUDE) -> npt.NDArray[np.float64]:
    """World-frame gravity term ``g`` of the accelerometer model, pointing up.

    Args:
        magnitude: gravity magnitude in m/s².

    Returns:
        The vector ``magnitude * e_z``.

    Raises:
        ValueError: if the magnitude is not positive.
    """
    if not magnitude > 0.0:
        raise ValueError(f"gravity magnitude must be positive, got {magnitude}")
    return magnitude * WORLD_UP


def plausible_samples(samples: ImuSamples) -> ImuSamples:
    """Drop readings that are not finite or exceed the physical magnitude guards.

    Args:
        samples: raw IMU samples.

    Returns:
        The plausible samples.
    """
    keep = (
        np.all(np.isfinite(samples.acc), axis=-1)
        & np.all(np.isfinite(samples.gyro), axis=-1)
        & (np.linalg.norm(samples.acc, axis=-1) < MAX_ACC_NORM)
        & (np.linalg.norm(samples.gyro, axis=-1) < MAX_GYRO_NORM)
    )
    dropped = len(samples) - int(np.count_nonzero(keep))
    if dropped:
        logger.warning("dropped %d implausible imu samples", dropped)
    return samples.take(keep)


def initial_orientation(
    samples: ImuSamples, duration: float, gravity: npt.NDArray[np.float64], tolerance: float
) -> npt.NDArray[np.float64]:
    """Align the initial orientation with gravity from a quasi-static interval.

    Args:
        samples: IMU samples, sorted by time.
        duration: length of the interval at the start of the stream, in seconds.
        gravity: world-frame gravity term.
        tolerance: accepted deviation of the mean specific force from ``‖g‖``.

    Returns:
        The unit quaternion aligning the mean accelerometer reading with gravity.

    Raises:
        ValueError: if the stream holds no samples.
    """
    if not len(samples):
        raise ValueError("gravity alignment needs at least one imu sample")
    window = samples.t < samples.t[0] + duration
    mean_acc = samples.acc[window].mean(axis=0)
    deviation = abs(float(np.linalg.norm(mean_acc)) - float(np.linalg.norm(gravity)))
    if deviation > tolerance:
        logger.warning(
            "mean specific force deviates %.3f m/s² from gravity, platform may be moving",
            deviation,
        )
    return gravity_align(mean_acc, gravity)


def _kinematics(state: SplineState, t: npt.NDArray[np.float64]) -> dict:
    """Evaluate every spline quantity the IMU model needs at the sample times."""
    u, _ = spline.normalized_time(t, state.grid)
    u = np.atleast_1d(u)
    tau = state.grid.tau
    ori = state.orientation_segment
    r = spline.orientation_eval(ori, u)
    return {
        "lambda_acc": spline.position_kinematics_matrix(u, tau, order=2),
        "acc_world": spline.position_eval(state.position_segment, u, tau, order=2),
        "r": r,
        "rot": so3_quat.to_rotmat(r),
        "omega": spline.angular_velocity(ori, u, tau),
        "u": u,
    }


def imu_residual(
    state: SplineState, samples: ImuSamples, gravity: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Predicted accelerometer and gyroscope readings ``h(x, t_i)``.

    Args:
        state: the spline state.
        samples: samples inside the active segment.
        gravity: world-frame gravity term.

    Returns:
        Predicted readings ``[acc; gyro]`` of shape (m, 6).
    """
    kin = _kinematics(state, samples.t)
    specific = np.einsum("mji,mj->mi", kin["rot"], kin["acc_world"] + gravity)
    return np.concatenate([specific + state.b_acc, kin["omega"] + state.b_gyro], axis=-1)


def imu_jacobian(
    state: SplineState, samples: ImuSamples, gravity: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Jacobian of :func:`imu_residual` w.r.t. the stacked state vector.

    Args:
        state: the spline state.
        samples: samples inside the active segment.
        gravity: world-frame gravity term.

    Returns:
        Jacobians of shape (m, 6, dim).
    """
    kin = _kinematics(state, samples.t)
    ori = state.orientation_segment
    u = kin["u"]
    rot_t = np.swapaxes(kin["rot"], -1, -2)
    jac_r = spline.jac_orientation_wrt_deltas(ori, u)
    d_specific = so3_quat.d_conjugation_d_q(kin["r"], kin["acc_world"] + gravity)
    jac = np.zeros((len(u), 6, state.dim))
    jac[:, 0:3, POSITION_BLOCK] = rot_t @ kin["lambda_acc"]
    jac[:, 0:3, ORIENTATION_BLOCK] = d_specific @ jac_r
    jac[:, 3:6, ORIENTATION_BLOCK] = spline.jac_angvel_wrt_deltas(ori, u, state.grid.tau)
    if state.with_biases:
        jac[:, 0:3, BIAS_ACC_BLOCK] = np.eye(3)
        jac[:, 3:6, BIAS_GYRO_BLOCK] = np.eye(3)
    return jac


class ImuModel(MeasurementModel):
    """Accelerometer and gyroscope readings of one observation batch."""

    def __init__(
        self,
        samples: ImuSamples,
        gravity: npt.NDArray[np.float64],
        sigma_acc: float,
        sigma_gyro: float,
    ):
        """Initialize the model.

        Args:
            samples: the batch's IMU samples.
            gravity: world-frame gravity term.
            sigma_acc: accelerometer noise std in m/s².
            sigma_gyro: gyroscope noise std in rad/s.
        """
        self._samples = samples
        self._gravity = gravity
        self._measured = np.concatenate([samples.acc, samples.gyro], axis=-1).ravel()
        self._noise = np.tile([sigma_acc**2] * 3 + [sigma_gyro**2] * 3, len(samples))

    def residual(self, state: SplineState) -> npt.NDArray[np.float64]:
        """Return ``z - h(x)`` stacked sample by sample.

        Args:
            state: the iterate.

        Returns:
            The innovation of shape (6m,).
        """
        if not len(self._samples):
            return np.zeros(0)
        return self._measured - imu_residual(state, self._samples, self._gravity).ravel()

    def jacobian(self, state: SplineState) -> npt.NDArray[np.float64]:
        """Return ``∂h/∂x`` stacked sample by sample.

        Args:
            state: the iterate.

        Returns:
            The Jacobian of shape (6m, dim).
        """
        if not len(self._samples):
            return np.zeros((0, state.dim))
        return imu_jacobian(state, self._samples, self._gravity).reshape(-1, state.dim)

    def noise_cov(self) -> npt.NDArray[np.float64]:
        """Return the diagonal of the accelerometer and gyroscope noise covariance."""
        return self._noise
