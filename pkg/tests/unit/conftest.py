# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""pytest fixtures for the unit tests."""

# pylint: disable=protected-access,too-few-public-methods

import typing

import numpy as np
import pytest

import so3_quat
from estimator import SplineState
from spline import KnotGrid, OrientationSegment, PositionSegment


def numerical_jacobian(
    func: typing.Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central finite-difference Jacobian of ``func`` at ``x``, shape (out, in)."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        offset = np.zeros_like(x)
        offset.flat[i] = step
        diff = np.asarray(func(x + offset)) - np.asarray(func(x - offset))
        columns.append(diff.ravel() / (2.0 * step))
    return np.stack(columns, axis=-1)


def random_unit_quaternion(rng: np.random.Generator, count: int | None = None):
    """Draw unit quaternions uniformly on the sphere."""
    shape = (4,) if count is None else (count, 4)
    return so3_quat.normalize(rng.normal(size=shape))


def random_orientation_segment(rng: np.random.Generator, scale: float = 0.5):
    """Draw an orientation segment with moderate increments."""
    return OrientationSegment(
        r_base=random_unit_quaternion(rng), deltas=rng.uniform(-scale, scale, size=(4, 3))
    )


def random_spline_state(rng: np.random.Generator, with_biases: bool = True) -> SplineState:
    """Draw a spline state whose active segment is [0.1, 0.2)."""
    return SplineState(
        pos_rcp=rng.uniform(-2.0, 2.0, size=(4, 3)),
        ori_deltas=rng.uniform(-0.05, 0.05, size=(4, 3)),
        b_acc=rng.normal(scale=0.1, size=3) if with_biases else np.zeros(3),
        b_gyro=rng.normal(scale=0.01, size=3) if with_biases else np.zeros(3),
        r_anchor=random_unit_quaternion(rng),
        grid=KnotGrid(t0=0.0, tau=0.1, n=2),
        with_biases=with_biases,
    )


@pytest.fixture(name="rng")
def rng_fixture() -> np.random.Generator:
    """Seeded random generator, fresh for every test."""
    return np.random.default_rng(20240611)


@pytest.fixture(name="position_segment")
def position_segment_fixture(rng: np.random.Generator) -> PositionSegment:
    """A random position segment."""
    return PositionSegment(points=rng.uniform(-3.0, 3.0, size=(4, 3)))
