# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Quaternion algebra used by the spline trajectory and its Jacobians.

Quaternions follow the Hamilton convention and are stored w-first as
``[w, x, y, z]``; the identity is ``[1, 0, 0, 0]``. Every function accepts
arrays with arbitrary leading batch dimensions, e.g. ``(m, 4)`` quaternions
and ``(m, 3)`` vectors, and is a pure function safe to call from any thread.
"""

import numpy as np
import numpy.typing as npt

from constants import EXP_SMALL_ANGLE, JACOBIAN_SMALL_ANGLE

UnitQuaternion = npt.NDArray[np.float64]
RotVec = npt.NDArray[np.float64]

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def skew(v: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Return the cross-product matrix of a 3-vector.

    Args:
        v: vector(s) of shape (..., 3).

    Returns:
        Matrices of shape (..., 3, 3) with ``skew(a) @ b == cross(a, b)``.
    """
    v = np.asarray(v, dtype=float)
    zero = np.zeros(v.shape[:-1])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def normalize(q: npt.ArrayLike) -> UnitQuaternion:
    """Project quaternion(s) back to unit norm.

    Args:
        q: quaternion(s) of shape (..., 4).

    Returns:
        Unit quaternion(s) of the same shape.

    Raises:
        ValueError: if a quaternion has (near) zero norm.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-15):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def conjugate(q: npt.ArrayLike) -> UnitQuaternion:
    """Return the conjugate, which is the inverse for unit quaternions."""
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def hamilton_product(a: npt.ArrayLike, b: npt.ArrayLike) -> UnitQuaternion:
    """Compute the Hamilton product ``a • b``.

    Args:
        a: left factor(s), shape (..., 4).
        b: right factor(s), shape (..., 4).

    Returns:
        The normalized product, broadcast over the leading dimensions.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    product = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return normalize(product)


def exp_at_identity(nu: npt.ArrayLike) -> UnitQuaternion:
    """Map a rotation vector to the unit quaternion ``[cos(|nu|/2), sin(|nu|/2) nu/|nu|]``.

    Args:
        nu: rotation vector(s) in radians, shape (..., 3).

    Returns:
        Unit quaternion(s) of shape (..., 4).
    """
    nu = np.asarray(nu, dtype=float)
    theta = np.linalg.norm(nu, axis=-1, keepdims=True)
    small = theta < EXP_SMALL_ANGLE
    safe_theta = np.where(small, 1.0, theta)
    # second-order Taylor expansion of both components below the threshold
    w = np.where(small, 1.0 - theta**2 / 8.0, np.cos(theta / 2.0))
    scale = np.where(small, 0.5 - theta**2 / 48.0, np.sin(theta / 2.0) / safe_theta)
    return normalize(np.concatenate([w, scale * nu], axis=-1))


def log_at_identity(q: npt.ArrayLike) -> RotVec:
    """Map a unit quaternion to its rotation vector, inverse of :func:`exp_at_identity`.

    The quaternion is sign-flipped to ``w >= 0`` first, so ``q`` and ``-q`` give the
    same result.

    Args:
        q: unit quaternion(s), shape (..., 4).

    Returns:
        Rotation vector(s) with norm in [0, pi], shape (..., 3).
    """
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    small = s < EXP_SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    safe_w = np.where(small, w, 1.0)
    scale = np.where(small, 2.0 / safe_w, 2.0 * np.arctan2(s, w) / safe_s)
    return scale * v


def to_rotmat(q: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Convert unit quaternion(s) to proper orthogonal 3x3 rotation matrices.

    Args:
        q: unit quaternion(s), shape (..., 4).

    Returns:
        Rotation matrices of shape (..., 3, 3).
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack(
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1
            ),
            np.stack(
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1
            ),
            np.stack(
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1
            ),
        ],
        axis=-2,
    )


def rotate(q: npt.ArrayLike, v: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Rotate vector(s) ``v`` by ``q``, i.e. the vector part of ``q • v • q⁻¹``."""
    return np.einsum("...ij,...j->...i", to_rotmat(q), np.asarray(v, dtype=float))


def left_matrix(q: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Return the 4x4 matrix ``L(q)`` such that ``q • p == L(q) @ p``.

    Args:
        q: quaternion(s), shape (..., 4).

    Returns:
        Matrices of shape (..., 4, 4).
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([w, -x, -y, -z], axis=-1),
            np.stack([x, w, -z, y], axis=-1),
            np.stack([y, z, w, -x], axis=-1),
            np.stack([z, -y, x, w], axis=-1),
        ],
        axis=-2,
    )


def right_matrix(q: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Return the 4x4 matrix ``R(q)`` such that ``p • q == R(q) @ p``.

    Args:
        q: quaternion(s), shape (..., 4).

    Returns:
        Matrices of shape (..., 4, 4).
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([w, -x, -y, -z], axis=-1),
            np.stack([x, w, z, -y], axis=-1),
            np.stack([y, -z, w, x], axis=-1),
            np.stack([z, y, -x, w], axis=-1),
        ],
        axis=-2,
    )


def d_exp_d_nu(nu: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Jacobian of :func:`exp_at_identity` as a 4-vector w.r.t. the rotation vector.

    Args:
        nu: rotation vector(s), shape (..., 3).

    Returns:
        Jacobians of shape (..., 4, 3).
    """
    nu = np.asarray(nu, dtype=float)
    theta = np.linalg.norm(nu, axis=-1)[..., None, None]
    small = theta < JACOBIAN_SMALL_ANGLE
    safe_theta = np.where(small, 1.0, theta)
    half_sin = np.sin(safe_theta / 2.0)
    half_cos = np.cos(safe_theta / 2.0)
    # f = sin(θ/2)/θ and g = f'(θ)/θ, with their Taylor series around zero
    f = np.where(small, 0.5 - theta**2 / 48.0, half_sin / safe_theta)
    g = np.where(
        small,
        -1.0 / 24.0 + theta**2 / 960.0,
        (0.5 * half_cos * safe_theta - half_sin) / safe_theta**3,
    )
    col = nu[..., :, None]
    row = nu[..., None, :]
    w_row = -0.5 * f * row
    vec_rows = f * np.eye(3) + g * col * row
    return np.concatenate([w_row, vec_rows], axis=-2)


def d_conjugation_d_q(q: npt.ArrayLike, v: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Jacobian of the vector part of ``q⁻¹ • v • q`` w.r.t. the four components of ``q``.

    For unit ``q`` the value is ``to_rotmat(q).T @ v``; the inverse is taken as the
    conjugate, so the Jacobian also carries the radial (norm) direction.

    Args:
        q: unit quaternion(s), shape (..., 4).
        v: vector(s), shape (..., 3).

    Returns:
        Jacobians of shape (..., 3, 4).
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., 0, None]
    u = q[..., 1:]
    w_col = w * v - np.cross(u, v)
    dot = np.einsum("...i,...i->...", u, v)[..., None, None]
    vec_cols = (
        dot * np.eye(3)
        + u[..., :, None] * v[..., None, :]
        - v[..., :, None] * u[..., None, :]
        + w[..., None] * skew(v)
    )
    return 2.0 * np.concatenate([w_col[..., :, None], vec_cols], axis=-1)


def d_rotation_d_q(q: npt.ArrayLike, v: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Jacobian of the vector part of ``q • v • q⁻¹`` w.r.t. the four components of ``q``.

    Args:
        q: unit quaternion(s), shape (..., 4).
        v: vector(s), shape (..., 3).

    Returns:
        Jacobians of shape (..., 3, 4).
    """
    return d_conjugation_d_q(conjugate(q), v) * np.array([1.0, -1.0, -1.0, -1.0])


def quaternion_from_two_vectors(a: npt.ArrayLike, b: npt.ArrayLike) -> UnitQuaternion:
    """Return the minimal rotation ``q`` with ``rotate(q, a)`` parallel to ``b``.

    Args:
        a: source direction, shape (3,).
        b: target direction, shape (3,).

    Returns:
        Unit quaternion of shape (4,).
    """
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    cos_angle = float(np.dot(a, b))
    if cos_angle < -1.0 + 1e-12:
        # antiparallel: rotate by pi around any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        return exp_at_identity(np.pi * axis / np.linalg.norm(axis))
    return normalize(np.concatenate([[1.0 + cos_angle], np.cross(a, b)]))


def slerp(a: npt.ArrayLike, b: npt.ArrayLike, fraction: npt.ArrayLike) -> UnitQuaternion:
    """Spherical-linear interpolation between ``a`` (fraction 0) and ``b`` (fraction 1)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    fraction = np.asarray(fraction, dtype=float)[..., None]
    delta = log_at_identity(hamilton_product(conjugate(a), b))
    return hamilton_product(a, exp_at_identity(fraction * delta))
