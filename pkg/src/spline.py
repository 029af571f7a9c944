# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Uniform cubic B-spline evaluation for 6-DoF trajectories.

Position is a plain cubic B-spline over four control points; orientation is a
cumulative quaternion B-spline over an anchor quaternion and four tangent-space
increments. All evaluation functions accept the normalized time ``u`` as a
scalar or as an array of shape (m,); array inputs add a leading dimension of
size m to every output. Derivative operations take the knot interval ``tau``
and return SI units.
"""

import dataclasses
import math
import typing

import numpy as np
import numpy.typing as npt

import so3_quat
from exceptions import OutOfSpanError

OMEGA = (
    np.array(
        [
            [1.0, -3.0, 3.0, -1.0],
            [4.0, 0.0, -6.0, 3.0],
            [1.0, 3.0, 3.0, -3.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    / 6.0
)
PHI = (
    np.array(
        [
            [6.0, 0.0, 0.0, 0.0],
            [5.0, 3.0, -3.0, 1.0],
            [1.0, 3.0, 3.0, -2.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    / 6.0
)

Order = typing.Literal[0, 1, 2]


@dataclasses.dataclass(frozen=True)
class KnotGrid:
    """Uniform knot grid; knot ``i`` sits at ``t0 + i * tau``.

    The active segment is ``[t_{n-1}, t_n)``, driven by the four control points
    ending at index ``n``.

    Attrs:
        t0: time of knot 0 in seconds.
        tau: knot interval in seconds.
        n: index of the newest knot.
    """

    t0: float
    tau: float
    n: int

    def __post_init__(self) -> None:
        """Validate the knot interval.

        Raises:
            ValueError: if tau is not positive.
        """
        if not self.tau > 0.0:
            raise ValueError(f"knot interval must be positive, got {self.tau}")

    def knot(self, index: int) -> float:
        """Return the time of a knot.

        Args:
            index: the knot index.

        Returns:
            The knot time in seconds.
        """
        return self.t0 + index * self.tau

    @property
    def span(self) -> tuple[float, float]:
        """Half-open time span ``[t_{n-1}, t_n)`` of the active segment."""
        return self.knot(self.n - 1), self.knot(self.n)

    def segment_of(self, t: npt.ArrayLike) -> npt.NDArray[np.int64]:
        """Return the index ``k`` of the segment ``[t_{k-1}, t_k)`` containing each time.

        Membership is decided against :meth:`knot` so a time exactly on a knot
        falls in the same segment as the spans the filter checks against.
        """
        t_arr = np.asarray(t, dtype=float)
        k = np.floor((t_arr - self.t0) / self.tau).astype(np.int64) + 1
        # the floor estimate is at most one segment off
        k = k - (self.t0 + (k - 1) * self.tau > t_arr)
        return k + (self.t0 + k * self.tau <= t_arr)

    def advanced(self, count: int = 1) -> "KnotGrid":
        """Return the grid extended by ``count`` knots."""
        return dataclasses.replace(self, n=self.n + count)


@dataclasses.dataclass(frozen=True)
class PositionSegment:
    """Four position control points ``s_{n-3} .. s_n`` in meters.

    Attrs:
        points: control points, shape (4, 3).
    """

    points: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate the control points.

        Raises:
            ValueError: if the shape is wrong or a component is not finite.
        """
        if self.points.shape != (4, 3) or not np.all(np.isfinite(self.points)):
            raise ValueError("a position segment needs 4 finite 3-vectors")


@dataclasses.dataclass(frozen=True)
class OrientationSegment:
    """Anchor quaternion ``r_{n-4}`` and the increments ``δ_{n-3} .. δ_n``.

    Attrs:
        r_base: unit anchor quaternion, shape (4,).
        deltas: tangent-space increments in radians, shape (4, 3).
    """

    r_base: npt.NDArray[np.float64]
    deltas: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate the anchor and increments.

        Raises:
            ValueError: if the anchor is not unit or an increment reaches pi.
        """
        if abs(float(np.linalg.norm(self.r_base)) - 1.0) > 1e-9:
            raise ValueError("orientation anchor must be a unit quaternion")
        if self.deltas.shape != (4, 3) or not np.all(np.isfinite(self.deltas)):
            raise ValueError("an orientation segment needs 4 finite increments")
        if np.any(np.linalg.norm(self.deltas, axis=-1) >= math.pi):
            raise ValueError("orientation increments must have magnitude below pi")


def _power_basis(u: npt.NDArray[np.float64], order: int, tau: float) -> npt.NDArray[np.float64]:
    """Return the normalized time vector or its time derivatives, shape (m, 4).

    Raises:
        ValueError: if the derivative order is not supported.
    """
    zeros = np.zeros_like(u)
    ones = np.ones_like(u)
    if order == 0:
        return np.stack([ones, u, u**2, u**3], axis=-1)
    if order == 1:
        return np.stack([zeros, ones, 2.0 * u, 3.0 * u**2], axis=-1) / tau
    if order == 2:
        return np.stack([zeros, zeros, 2.0 * ones, 6.0 * u], axis=-1) / tau**2
    raise ValueError(f"unsupported derivative order {order}")


def _as_batch(u: npt.ArrayLike) -> tuple[npt.NDArray[np.float64], bool]:
    """Return ``u`` as a 1-D array and whether the input was a scalar."""
    arr = np.asarray(u, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _unbatch(value: npt.NDArray[np.float64], scalar: bool) -> npt.NDArray[np.float64]:
    """Drop the leading batch dimension again for scalar inputs."""
    return value[0] if scalar else value


def normalized_time(t: npt.ArrayLike, grid: KnotGrid) -> tuple[npt.NDArray[np.float64], int]:
    """Return the normalized time ``u = (t - t_{n-1}) / tau`` inside the active segment.

    Args:
        t: time(s) in seconds.
        grid: the knot grid whose active segment is queried.

    Returns:
        The normalized time(s) in [0, 1) and the segment index ``n``.

    Raises:
        OutOfSpanError: if a time lies outside ``[t_{n-1}, t_n)``.
    """
    t_arr = np.asarray(t, dtype=float)
    start, end = grid.span
    if np.any(t_arr < start) or np.any(t_arr >= end):
        raise OutOfSpanError(f"time outside the active spline segment {grid.n}", (start, end))
    u = np.clip((t_arr - start) / grid.tau, 0.0, np.nextafter(1.0, 0.0))
    return u, grid.n


def basis_weights(u: npt.ArrayLike, tau: float = 1.0, order: Order = 0) -> npt.NDArray[np.float64]:
    """Return the blending weights ``Ω u̲`` (or their derivatives) of the four control points.

    Args:
        u: normalized time(s).
        tau: knot interval in seconds.
        order: time derivative order, 0 to 2.

    Returns:
        Weights of shape (4,) or (m, 4).
    """
    u_arr, scalar = _as_batch(u)
    return _unbatch(_power_basis(u_arr, order, tau) @ OMEGA.T, scalar)


def position_kinematics_matrix(
    u: npt.ArrayLike, tau: float = 1.0, order: Order = 0
) -> npt.NDArray[np.float64]:
    """Return ``Λ = (Ω u̲)ᵀ ⊗ I₃`` mapping stacked control points to position kinematics.

    Args:
        u: normalized time(s).
        tau: knot interval in seconds.
        order: time derivative order, 0 to 2.

    Returns:
        Matrices of shape (3, 12) or (m, 3, 12).
    """
    u_arr, scalar = _as_batch(u)
    weights = _power_basis(u_arr, order, tau) @ OMEGA.T
    lam = np.einsum("mi,jk->mjik", weights, np.eye(3)).reshape(len(u_arr), 3, 12)
    return _unbatch(lam, scalar)


def position_eval(
    seg: PositionSegment, u: npt.ArrayLike, tau: float = 1.0, order: Order = 0
) -> npt.NDArray[np.float64]:
    """Evaluate position, velocity or acceleration on a segment.

    Args:
        seg: the four position control points.
        u: normalized time(s) in [0, 1].
        tau: knot interval in seconds.
        order: 0 for meters, 1 for m/s, 2 for m/s².

    Returns:
        Vectors of shape (3,) or (m, 3).
    """
    return basis_weights(u, tau, order) @ seg.points


def cumulative_lambdas(
    u: npt.ArrayLike, order: Order = 0, tau: float = 1.0
) -> npt.NDArray[np.float64]:
    """Return the cumulative basis values ``Φ u̲`` or their time derivatives ``Φ u̲̇``.

    Args:
        u: normalized time(s).
        order: 0 for values, 1 for time derivatives (scaled by 1/tau).
        tau: knot interval in seconds.

    Returns:
        Arrays of shape (4,) or (m, 4).

    Raises:
        ValueError: if the order is not 0 or 1.
    """
    if order not in (0, 1):
        raise ValueError(f"cumulative basis supports orders 0 and 1, got {order}")
    u_arr, scalar = _as_batch(u)
    return _unbatch(_power_basis(u_arr, order, tau) @ PHI.T, scalar)


def _increment_factors(
    seg: OrientationSegment, lambdas: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Return ``e_i = Exp(λ_i δ_i)`` for every sample, shape (m, 4, 4)."""
    return so3_quat.exp_at_identity(lambdas[:, :, None] * seg.deltas[None, :, :])


def _prefix_suffix(
    seg: OrientationSegment, factors: npt.NDArray[np.float64]
) -> tuple[list[npt.NDArray[np.float64]], list[npt.NDArray[np.float64]]]:
    """Return ``r_base • e_0 ⋯ e_{i-1}`` and ``e_{i+1} ⋯ e_3`` for i = 0..3."""
    m = factors.shape[0]
    prefix = [np.broadcast_to(seg.r_base, (m, 4))]
    for i in range(3):
        prefix.append(so3_quat.hamilton_product(prefix[-1], factors[:, i]))
    suffix = [np.broadcast_to(so3_quat.IDENTITY, (m, 4))]
    for i in range(3, 0, -1):
        suffix.insert(0, so3_quat.hamilton_product(factors[:, i], suffix[0]))
    return prefix, suffix


def orientation_eval(seg: OrientationSegment, u: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Evaluate ``r(t) = r_{n-4} • Π Exp(λ_i δ_i)`` on a segment.

    Args:
        seg: the orientation segment.
        u: normalized time(s) in [0, 1].

    Returns:
        Unit quaternion(s) of shape (4,) or (m, 4).
    """
    u_arr, scalar = _as_batch(u)
    factors = _increment_factors(seg, cumulative_lambdas(u_arr))
    r = np.broadcast_to(seg.r_base, (len(u_arr), 4))
    for i in range(4):
        r = so3_quat.hamilton_product(r, factors[:, i])
    return _unbatch(r, scalar)


def _rotate_inverse(
    q: npt.NDArray[np.float64], v: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    """Return the vector part of ``q⁻¹ • v • q`` batched over the leading axis."""
    return np.einsum("mji,mj->mi", so3_quat.to_rotmat(q), v)


def _angular_velocity_terms(
    seg: OrientationSegment, u_arr: npt.NDArray[np.float64], tau: float
) -> tuple[npt.NDArray[np.float64], ...]:
    """Run the three-stage recursion, returning (ω, ω₁, ω₂, λ, λ̇, e)."""
    lam = cumulative_lambdas(u_arr)
    lam_dot = cumulative_lambdas(u_arr, order=1, tau=tau)
    factors = _increment_factors(seg, lam)
    omega_1 = lam_dot[:, 1, None] * seg.deltas[1]
    omega_2 = _rotate_inverse(factors[:, 2], omega_1) + lam_dot[:, 2, None] * seg.deltas[2]
    omega = _rotate_inverse(factors[:, 3], omega_2) + lam_dot[:, 3, None] * seg.deltas[3]
    return omega, omega_1, omega_2, lam, lam_dot, factors


def angular_velocity(
    seg: OrientationSegment, u: npt.ArrayLike, tau: float
) -> npt.NDArray[np.float64]:
    """Body-frame angular velocity of the orientation spline in rad/s.

    Args:
        seg: the orientation segment.
        u: normalized time(s) in [0, 1].
        tau: knot interval in seconds.

    Returns:
        Vectors of shape (3,) or (m, 3).
    """
    u_arr, scalar = _as_batch(u)
    return _unbatch(_angular_velocity_terms(seg, u_arr, tau)[0], scalar)


def jac_orientation_wrt_deltas(
    seg: OrientationSegment, u: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Jacobian of :func:`orientation_eval` w.r.t. the four stacked increments.

    Args:
        seg: the orientation segment.
        u: normalized time(s) in [0, 1].

    Returns:
        Matrices of shape (4, 12) or (m, 4, 12).
    """
    u_arr, scalar = _as_batch(u)
    lam = cumulative_lambdas(u_arr)
    factors = _increment_factors(seg, lam)
    prefix, suffix = _prefix_suffix(seg, factors)
    blocks = []
    for i in range(4):
        d_exp = so3_quat.d_exp_d_nu(lam[:, i, None] * seg.deltas[i])
        block = so3_quat.left_matrix(prefix[i]) @ so3_quat.right_matrix(suffix[i]) @ d_exp
        blocks.append(lam[:, i, None, None] * block)
    return _unbatch(np.concatenate(blocks, axis=-1), scalar)


def jac_angvel_wrt_deltas(
    seg: OrientationSegment, u: npt.ArrayLike, tau: float
) -> npt.NDArray[np.float64]:
    """Jacobian of :func:`angular_velocity` w.r.t. the four stacked increments.

    Args:
        seg: the orientation segment.
        u: normalized time(s) in [0, 1].
        tau: knot interval in seconds.

    Returns:
        Matrices of shape (3, 12) or (m, 3, 12).
    """
    u_arr, scalar = _as_batch(u)
    _, omega_1, omega_2, lam, lam_dot, factors = _angular_velocity_terms(seg, u_arr, tau)
    rot_t = np.swapaxes(so3_quat.to_rotmat(factors), -1, -2)
    eye = np.eye(3)

    def conjugation_term(i: int, v: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        d_conj = so3_quat.d_conjugation_d_q(factors[:, i], v)
        d_exp = so3_quat.d_exp_d_nu(lam[:, i, None] * seg.deltas[i])
        return lam[:, i, None, None] * (d_conj @ d_exp) + lam_dot[:, i, None, None] * eye

    block_0 = np.zeros((len(u_arr), 3, 3))
    block_1 = lam_dot[:, 1, None, None] * (rot_t[:, 3] @ rot_t[:, 2])
    block_2 = rot_t[:, 3] @ conjugation_term(2, omega_1)
    block_3 = conjugation_term(3, omega_2)
    return _unbatch(np.concatenate([block_0, block_1, block_2, block_3], axis=-1), scalar)
