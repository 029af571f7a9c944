# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Recursive Bayesian estimation of a cubic B-spline trajectory.

The filter state holds the four newest position control points, the four newest
orientation increments and optionally the IMU biases. Prediction either keeps the
spline span (random walk) or appends knots with a constant-velocity transition;
the update is an iterated EKF over a batch of stacked measurements.
"""

import abc
import dataclasses
import logging
import math
import typing

import numpy as np
import numpy.typing as npt
import scipy.linalg

import so3_quat
import spline
from constants import (
    BIAS_ACC_BLOCK,
    BIAS_GYRO_BLOCK,
    ORIENTATION_BLOCK,
    POSITION_BLOCK,
    STATE_DIM,
    STATE_DIM_WITH_BIASES,
)
from exceptions import (
    EstimatorError,
    MeasurementInputError,
    StaleMeasurementError,
    UpdateFailureError,
)
from spline import KnotGrid, OrientationSegment, PositionSegment
from spline_history import RetiredControlPoint, SplineHistory

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12

GainForm = typing.Literal["standard", "information"]


@dataclasses.dataclass(frozen=True)
class SplineState:
    """Filter state: recurrent control points, increments, biases and the anchor.

    Attrs:
        pos_rcp: position control points ``s_{n-3} .. s_n`` in meters, shape (4, 3).
        ori_deltas: orientation increments ``δ_{n-3} .. δ_n`` in radians, shape (4, 3).
        b_acc: accelerometer bias in m/s².
        b_gyro: gyroscope bias in rad/s.
        r_anchor: the anchor quaternion ``r_{n-4}``, kept outside the state vector.
        grid: the knot grid whose active segment the control points drive.
        with_biases: whether the biases are part of the state vector.
    """

    pos_rcp: npt.NDArray[np.float64]
    ori_deltas: npt.NDArray[np.float64]
    b_acc: npt.NDArray[np.float64]
    b_gyro: npt.NDArray[np.float64]
    r_anchor: npt.NDArray[np.float64]
    grid: KnotGrid
    with_biases: bool = True

    def __post_init__(self) -> None:
        """Validate shapes and the principal domain of the increments.

        Raises:
            ValueError: if the state is malformed.
        """
        if self.pos_rcp.shape != (4, 3) or self.ori_deltas.shape != (4, 3):
            raise ValueError("a spline state needs 4 position RCPs and 4 increments")
        if np.any(np.linalg.norm(self.ori_deltas, axis=-1) >= math.pi):
            raise ValueError("orientation increments must have magnitude below pi")
        if abs(float(np.linalg.norm(self.r_anchor)) - 1.0) > 1e-9:
            raise ValueError("the orientation anchor must be a unit quaternion")

    @property
    def dim(self) -> int:
        """Dimension of the state vector."""
        return STATE_DIM_WITH_BIASES if self.with_biases else STATE_DIM

    @property
    def position_segment(self) -> PositionSegment:
        """The active position segment."""
        return PositionSegment(points=self.pos_rcp)

    @property
    def orientation_segment(self) -> OrientationSegment:
        """The active orientation segment."""
        return OrientationSegment(r_base=self.r_anchor, deltas=self.ori_deltas)

    def to_vector(self) -> npt.NDArray[np.float64]:
        """Stack the state into ``[s; δ]`` or ``[s; δ; b_acc; b_gyro]``."""
        parts = [self.pos_rcp.ravel(), self.ori_deltas.ravel()]
        if self.with_biases:
            parts += [self.b_acc, self.b_gyro]
        return np.concatenate(parts)

    def with_vector(self, x: npt.ArrayLike) -> "SplineState":
        """Return a copy carrying the values of a stacked state vector.

        Args:
            x: the stacked vector, laid out as :meth:`to_vector`.

        Returns:
            The new state with the same anchor and grid.

        Raises:
            ValueError: if the vector length does not match.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a state vector of length {self.dim}, got {x.shape}")
        return dataclasses.replace(
            self,
            pos_rcp=x[POSITION_BLOCK].reshape(4, 3),
            ori_deltas=x[ORIENTATION_BLOCK].reshape(4, 3),
            b_acc=x[BIAS_ACC_BLOCK] if self.with_biases else self.b_acc,
            b_gyro=x[BIAS_GYRO_BLOCK] if self.with_biases else self.b_gyro,
        )


@dataclasses.dataclass(frozen=True)
class Gaussian:
    """Gaussian belief over the spline state.

    Attrs:
        mean: the mean state.
        cov: the covariance of the stacked state vector.
    """

    mean: SplineState
    cov: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate the covariance shape.

        Raises:
            ValueError: if the covariance does not match the state dimension.
        """
        dim = self.mean.dim
        if self.cov.shape != (dim, dim):
            raise ValueError(f"covariance must be {dim}x{dim}, got {self.cov.shape}")


@dataclasses.dataclass(frozen=True)
class ProcessNoise:
    """Process noise of the two prediction branches.

    Attrs:
        sigma_position: std of a newly appended position control point in meters.
        sigma_delta: std of a newly appended orientation increment in radians.
        sigma_bias_acc: accelerometer bias random walk in m/s²/√s.
        sigma_bias_gyro: gyroscope bias random walk in rad/s/√s.
        q_random_walk: variance added to every state component when no knot is added.
    """

    sigma_position: float
    sigma_delta: float
    sigma_bias_acc: float = 0.0
    sigma_bias_gyro: float = 0.0
    q_random_walk: float = 0.0

    def extension_cov(self, with_biases: bool, tau: float) -> npt.NDArray[np.float64]:
        """Process covariance of one knot extension.

        Only the appended control point, the appended increment and the biases
        receive noise; carried-over control points are noise free.

        Args:
            with_biases: whether the state carries biases.
            tau: knot interval in seconds.

        Returns:
            The diagonal covariance matrix.
        """
        diag = np.zeros(STATE_DIM_WITH_BIASES if with_biases else STATE_DIM)
        diag[9:12] = self.sigma_position**2
        diag[21:24] = self.sigma_delta**2
        if with_biases:
            diag[BIAS_ACC_BLOCK] = self.sigma_bias_acc**2 * tau
            diag[BIAS_GYRO_BLOCK] = self.sigma_bias_gyro**2 * tau
        return np.diag(diag)


class Linearization(typing.NamedTuple):
    """Stacked linearization of a measurement model at one iterate.

    Attrs:
        residual: innovation ``γ = z - h(x)``, shape (m,).
        jacobian: ``∂h/∂x``, shape (m, dim).
        noise_var: diagonal of the measurement covariance, shape (m,).
    """

    residual: npt.NDArray[np.float64]
    jacobian: npt.NDArray[np.float64]
    noise_var: npt.NDArray[np.float64]


class MeasurementModel(abc.ABC):
    """A batch of measurements with its observation function."""

    @abc.abstractmethod
    def residual(self, state: SplineState) -> npt.NDArray[np.float64]:
        """Return the innovation ``z - h(x)`` at ``state``."""

    @abc.abstractmethod
    def jacobian(self, state: SplineState) -> npt.NDArray[np.float64]:
        """Return ``∂h/∂x`` at ``state``, one row per residual entry."""

    @abc.abstractmethod
    def noise_cov(self) -> npt.NDArray[np.float64]:
        """Return the diagonal of the measurement noise covariance."""

    def linearize(self, state: SplineState) -> Linearization:
        """Evaluate residual, Jacobian and noise at one iterate.

        Args:
            state: the iterate.

        Returns:
            The linearization.
        """
        return Linearization(self.residual(state), self.jacobian(state), self.noise_cov())


class UpdateResult(typing.NamedTuple):
    """Outcome of an iterated update.

    Attrs:
        posterior: the posterior belief.
        iterations: number of iterations run.
    """

    posterior: Gaussian
    iterations: int


def symmetrize(cov: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Return ``(P + Pᵀ) / 2``."""
    return 0.5 * (cov + cov.T)


def extension_matrix(with_biases: bool) -> npt.NDArray[np.float64]:
    """Return the knot-extension transition ``diag(A_s, A_r[, I₃, I₃])``.

    Both blocks shift the window by one control point. The appended position
    control point is ``2 s_{n-1} - s_{n-3}`` and the appended increment is
    ``δ_{n-2}``, which keeps linear control-point sequences linear.

    Args:
        with_biases: whether the state carries biases.

    Returns:
        The 24x24 or 30x30 transition matrix.
    """
    eye = np.eye(3)
    shift = np.zeros((12, 12))
    shift[0:9, 3:12] = np.eye(9)
    a_s = shift.copy()
    a_s[9:12, 0:3] = -eye
    a_s[9:12, 6:9] = 2.0 * eye
    a_r = shift.copy()
    a_r[9:12, 3:6] = eye
    blocks = [a_s, a_r] + ([eye, eye] if with_biases else [])
    return scipy.linalg.block_diag(*blocks)


def extend_state(state: SplineState) -> tuple[SplineState, RetiredControlPoint]:
    """Append one knot to the mean state.

    The oldest increment is folded into the anchor so the state keeps exactly
    four increments.

    Args:
        state: the state to extend.

    Returns:
        The extended state and the control point it dropped.
    """
    retired = RetiredControlPoint(
        index=state.grid.n - 3,
        position=state.pos_rcp[0].copy(),
        delta=state.ori_deltas[0].copy(),
        anchor=state.r_anchor.copy(),
    )
    x = extension_matrix(state.with_biases) @ state.to_vector()
    extended = dataclasses.replace(
        state.with_vector(x),
        r_anchor=so3_quat.hamilton_product(
            state.r_anchor, so3_quat.exp_at_identity(state.ori_deltas[0])
        ),
        grid=state.grid.advanced(),
    )
    return extended, retired


def predict(
    prior: Gaussian,
    t_z: float,
    noise: ProcessNoise,
    on_retire: typing.Callable[[RetiredControlPoint], None] | None = None,
) -> Gaussian:
    """Propagate the belief so that ``t_z`` lies in the active segment.

    Args:
        prior: the belief after the previous update.
        t_z: timestamp of the newest measurement in seconds.
        noise: process noise of both prediction branches.
        on_retire: called with every control point dropped by a knot extension.

    Returns:
        The predicted belief.

    Raises:
        StaleMeasurementError: if ``t_z`` precedes the active segment.
    """
    grid = prior.mean.grid
    start, end = grid.span
    if t_z < start:
        raise StaleMeasurementError(
            f"measurement at {t_z:.9f} precedes the active segment starting at {start:.9f}"
        )
    if t_z < end:
        if noise.q_random_walk <= 0.0:
            return prior
        return Gaussian(prior.mean, prior.cov + noise.q_random_walk * np.eye(prior.mean.dim))
    transition = extension_matrix(prior.mean.with_biases)
    q_ext = noise.extension_cov(prior.mean.with_biases, grid.tau)
    mean, cov = prior.mean, prior.cov
    while t_z >= mean.grid.knot(mean.grid.n):
        mean, retired = extend_state(mean)
        cov = symmetrize(transition @ cov @ transition.T + q_ext)
        if on_retire is not None:
            on_retire(retired)
    if mean.grid.n - grid.n > 1:
        logger.info("caught up %d knots after a data gap", mean.grid.n - grid.n)
    return Gaussian(mean, cov)


def _cholesky(matrix: npt.NDArray[np.float64], what: str) -> tuple:
    """Cholesky-factor a symmetric positive definite matrix.

    Raises:
        UpdateFailureError: if the matrix is numerically singular.
    """
    try:
        factor = scipy.linalg.cho_factor(matrix, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        condition = float(np.linalg.cond(matrix))
        raise UpdateFailureError(f"{what} is not positive definite", condition) from exc
    diag = np.abs(np.diag(factor[0]))
    condition = float((diag.max() / diag.min()) ** 2) if diag.min() > 0.0 else math.inf
    if not condition < MAX_CONDITION:
        raise UpdateFailureError(f"{what} is numerically singular", condition)
    return factor


def kalman_gain(
    cov: npt.NDArray[np.float64],
    jacobian: npt.NDArray[np.float64],
    noise: npt.NDArray[np.float64],
    form: GainForm | None = None,
) -> npt.NDArray[np.float64]:
    """Compute the Kalman gain in the cheaper of its two algebraically equal forms.

    With ``m`` measurements and ``n`` states the standard form
    ``P Hᵀ (H P Hᵀ + R)⁻¹`` inverts an m x m matrix and is used for ``m <= n``;
    otherwise the information form ``(Hᵀ R⁻¹ H + P⁻¹)⁻¹ Hᵀ R⁻¹`` inverts n x n.

    Args:
        cov: prior covariance P, shape (n, n).
        jacobian: stacked Jacobian H, shape (m, n).
        noise: R as a full (m, m) matrix or as its diagonal, shape (m,).
        form: force one form instead of choosing by dimension.

    Returns:
        The gain K of shape (n, m).
    """
    m, n = jacobian.shape
    if m == 0:
        return np.zeros((n, 0))
    if form is None:
        form = "standard" if m <= n else "information"
    noise_matrix = np.diag(noise) if noise.ndim == 1 else noise
    if form == "standard":
        innovation_cov = symmetrize(jacobian @ cov @ jacobian.T + noise_matrix)
        factor = _cholesky(innovation_cov, "innovation covariance")
        return scipy.linalg.cho_solve(factor, jacobian @ cov, check_finite=False).T
    if noise.ndim == 1:
        weighted = jacobian.T / noise
    else:
        weighted = scipy.linalg.cho_solve(
            _cholesky(noise, "measurement covariance"), jacobian, check_finite=False
        ).T
    cov_factor = _cholesky(cov, "prior covariance")
    cov_inv = scipy.linalg.cho_solve(cov_factor, np.eye(n), check_finite=False)
    information = symmetrize(weighted @ jacobian + cov_inv)
    info_factor = _cholesky(information, "information matrix")
    return scipy.linalg.cho_solve(info_factor, weighted, check_finite=False)


def _stack(linearizations: list[Linearization], dim: int) -> Linearization:
    """Concatenate the linearizations of several models."""
    if not linearizations:
        return Linearization(np.zeros(0), np.zeros((0, dim)), np.zeros(0))
    return Linearization(
        np.concatenate([lin.residual for lin in linearizations]),
        np.concatenate([lin.jacobian for lin in linearizations]),
        np.concatenate([lin.noise_var for lin in linearizations]),
    )


def iterated_update(
    prior: Gaussian,
    models: typing.Sequence[MeasurementModel],
    n_max: int = 5,
    eps: float = 1e-3,
) -> UpdateResult:
    """Run the modified iterated EKF update over one observation batch.

    Every iteration relinearizes all models at the current iterate and applies
    ``δx = K γ - (I - K H)(x̂_j - x̂_prior)``; it stops once ``‖δx‖ < eps`` or
    after ``n_max`` iterations.
    If a relinearization yields no rows, the update ends at the last iterate;
    the prior is returned only when the first linearization is empty.

    Args:
        prior: the predicted belief.
        models: measurement models of the batch, evaluated in order.
        n_max: maximum number of iterations.
        eps: convergence threshold on the Euclidean norm of ``δx``.

    Returns:
        The posterior and the number of iterations run.

    Raises:
        MeasurementInputError: if a residual is not finite.
        EstimatorError: if an iterate leaves the valid state domain.
    """
    dim = prior.mean.dim
    x_prior = prior.mean.to_vector()
    x = x_prior
    state = prior.mean
    gain = np.zeros((dim, 0))
    jacobian = np.zeros((0, dim))
    iterations = 0
    for iterations in range(1, n_max + 1):
        lin = _stack([model.linearize(state) for model in models], dim)
        if lin.residual.size == 0:
            if iterations == 1:
                return UpdateResult(prior, 0)
            # keep the last iterate with the gain that produced it
            iterations -= 1
            break
        bad = np.flatnonzero(~np.isfinite(lin.residual))
        if bad.size:
            raise MeasurementInputError(
                f"non-finite residual for measurement {bad[0]}", index=int(bad[0])
            )
        jacobian = lin.jacobian
        gain = kalman_gain(prior.cov, jacobian, lin.noise_var)
        correction = np.eye(dim) - gain @ jacobian
        step = gain @ lin.residual - correction @ (x - x_prior)
        x = x + step
        try:
            state = prior.mean.with_vector(x)
        except ValueError as exc:
            raise EstimatorError(f"iterate {iterations} left the state domain: {exc}") from exc
        if np.linalg.norm(step) < eps:
            break
    cov = symmetrize((np.eye(dim) - gain @ jacobian) @ prior.cov)
    return UpdateResult(Gaussian(state, cov), iterations)


def interpolate_pose(
    state: SplineState, t: npt.ArrayLike
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Evaluate position and orientation of the active segment.

    Args:
        state: the spline state.
        t: time(s) in seconds inside the active segment.

    Returns:
        Position(s) in meters and unit quaternion(s).
    """
    u, _ = spline.normalized_time(t, state.grid)
    return (
        spline.position_eval(state.position_segment, u),
        spline.orientation_eval(state.orientation_segment, u),
    )


def nees(error: npt.ArrayLike, cov: npt.NDArray[np.float64]) -> float:
    """Normalized estimation error squared ``eᵀ P⁻¹ e``.

    Args:
        error: difference between true and estimated state vectors.
        cov: the estimate covariance.

    Returns:
        The NEES value.
    """
    error = np.asarray(error, dtype=float)
    factor = scipy.linalg.cho_factor(cov)
    return float(error @ scipy.linalg.cho_solve(factor, error))


def initial_gaussian(
    t_start: float,
    tau: float,
    position: npt.ArrayLike,
    orientation: npt.ArrayLike,
    sigmas: typing.Mapping[str, float],
    with_biases: bool,
    pos_rcp: npt.ArrayLike | None = None,
    ori_deltas: npt.ArrayLike | None = None,
) -> Gaussian:
    """Bootstrap the filter belief at the first measurement.

    Without explicit control points the trajectory starts at rest: all four
    position control points equal ``position``, all increments are zero and the
    anchor is ``orientation``.

    Args:
        t_start: time of the first measurement; it opens the active segment.
        tau: knot interval in seconds.
        position: initial position in meters.
        orientation: initial unit quaternion, w-first.
        sigmas: initial standard deviations keyed ``position``, ``delta``,
            ``bias_acc`` and ``bias_gyro``.
        with_biases: whether the state carries IMU biases.
        pos_rcp: optional explicit position control points, shape (4, 3).
        ori_deltas: optional explicit increments, shape (4, 3).

    Returns:
        The initial belief.
    """
    grid = KnotGrid(t0=t_start - 2.0 * tau, tau=tau, n=3)
    state = SplineState(
        pos_rcp=(
            np.tile(np.asarray(position, dtype=float), (4, 1))
            if pos_rcp is None
            else np.asarray(pos_rcp, dtype=float)
        ),
        ori_deltas=np.zeros((4, 3)) if ori_deltas is None else np.asarray(ori_deltas, dtype=float),
        b_acc=np.zeros(3),
        b_gyro=np.zeros(3),
        r_anchor=so3_quat.normalize(orientation),
        grid=grid,
        with_biases=with_biases,
    )
    diag = np.concatenate(
        [np.full(12, sigmas["position"] ** 2), np.full(12, sigmas["delta"] ** 2)]
        + (
            [np.full(3, sigmas["bias_acc"] ** 2), np.full(3, sigmas["bias_gyro"] ** 2)]
            if with_biases
            else []
        )
    )
    return Gaussian(state, np.diag(diag))


def gravity_align(mean_acc: npt.ArrayLike, gravity: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Orientation whose transpose maps world gravity onto the mean accelerometer reading.

    Yaw is unobservable from gravity and is left at its minimal-rotation value.

    Args:
        mean_acc: mean accelerometer reading of a quasi-static interval, body frame.
        gravity: the world-frame gravity vector ``g`` of the accelerometer model.

    Returns:
        Unit quaternion ``r`` with ``to_rotmat(r).T @ g`` parallel to ``mean_acc``.
    """
    return so3_quat.quaternion_from_two_vectors(mean_acc, gravity)


class RecursiveSplineEstimator:
    """Single-writer filter over a sliding window of spline control points.

    Attrs:
        history: control points that left the window.
        belief: the current belief.
    """

    def __init__(self, initial: Gaussian, noise: ProcessNoise, n_max: int = 5, eps: float = 1e-3):
        """Initialize the estimator.

        Args:
            initial: the initial belief.
            noise: process noise.
            n_max: maximum number of update iterations.
            eps: update convergence threshold.
        """
        self._belief = initial
        self._noise = noise
        self._n_max = n_max
        self._eps = eps
        self._last_t = -math.inf
        self.history = SplineHistory.from_state(initial.mean)

    @property
    def belief(self) -> Gaussian:
        """Return the current belief."""
        return self._belief

    def predict(self, t_z: float) -> Gaussian:
        """Predict so the active segment contains ``t_z``.

        Args:
            t_z: the newest timestamp of the next batch.

        Returns:
            The predicted belief, which also becomes the current one.

        Raises:
            StaleMeasurementError: if ``t_z`` moves backward in time.
        """
        if t_z < self._last_t:
            raise StaleMeasurementError(
                f"measurement at {t_z:.9f} is older than the last processed {self._last_t:.9f}"
            )
        self._belief = predict(self._belief, t_z, self._noise, on_retire=self.history.retire)
        return self._belief

    def update(self, models: typing.Sequence[MeasurementModel], t_last: float) -> UpdateResult:
        """Fuse one batch into the current (predicted) belief.

        Args:
            models: measurement models of the batch.
            t_last: the newest timestamp of the batch.

        Returns:
            The update result.
        """
        result = iterated_update(self._belief, models, self._n_max, self._eps)
        self._belief = result.posterior
        self._last_t = max(self._last_t, t_last)
        return result
