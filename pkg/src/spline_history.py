# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Bookkeeping of control points that left the filter window."""

import logging
import typing

import numpy as np
import numpy.typing as npt

import so3_quat
import spline
from exceptions import OutOfSpanError
from spline import OrientationSegment, PositionSegment

if typing.TYPE_CHECKING:  # pragma: no cover
    from estimator import SplineState

logger = logging.getLogger(__name__)


class RetiredControlPoint(typing.NamedTuple):
    """Control point dropped from the filter state by a knot extension.

    Attrs:
        index: knot index ``i`` of the retired position RCP and increment.
        position: the position control point ``s_i`` in meters.
        delta: the orientation increment ``δ_i`` in radians.
        anchor: the anchor quaternion ``r_{i-1}`` in use before the extension.
    """

    index: int
    position: npt.NDArray[np.float64]
    delta: npt.NDArray[np.float64]
    anchor: npt.NDArray[np.float64]


class SplineHistory:
    """Posterior control points of segments that no longer change.

    A segment ``k`` covers ``[t_{k-1}, t_k)``. It is idle once all of its control
    points ``k-3 .. k`` have retired; idle segments are evaluated from the history
    alone, newer segments additionally need the current filter state.

    Attrs:
        t0: time of knot 0 in seconds.
        tau: knot interval in seconds.
        first_segment: the oldest segment that can be evaluated.
    """

    def __init__(self, t0: float, tau: float, first_segment: int):
        """Initialize an empty history.

        Args:
            t0: time of knot 0 in seconds.
            tau: knot interval in seconds.
            first_segment: the active segment of the initial filter state.
        """
        self.t0 = t0
        self.tau = tau
        self.first_segment = first_segment
        self._positions: dict[int, npt.NDArray[np.float64]] = {}
        self._deltas: dict[int, npt.NDArray[np.float64]] = {}
        self._anchors: dict[int, npt.NDArray[np.float64]] = {}
        self._last_retired = first_segment - 4

    @classmethod
    def from_state(cls, state: "SplineState") -> "SplineHistory":
        """Create an empty history matching the grid of an initial state.

        Args:
            state: the initial filter state.

        Returns:
            The history.
        """
        return cls(t0=state.grid.t0, tau=state.grid.tau, first_segment=state.grid.n)

    def retire(self, retired: RetiredControlPoint) -> None:
        """Store a control point dropped by a knot extension.

        Args:
            retired: the dropped control point.

        Raises:
            ValueError: if control points are not retired in knot order.
        """
        if retired.index != self._last_retired + 1:
            raise ValueError(
                f"control point {retired.index} retired out of order, "
                f"expected {self._last_retired + 1}"
            )
        self._positions[retired.index] = np.array(retired.position, dtype=float)
        self._deltas[retired.index] = np.array(retired.delta, dtype=float)
        self._anchors[retired.index - 1] = np.array(retired.anchor, dtype=float)
        self._last_retired = retired.index
        logger.debug("retired control point %d", retired.index)

    @property
    def last_idle_segment(self) -> int:
        """Newest segment whose control points have all retired."""
        return self._last_retired

    def knot(self, index: int) -> float:
        """Return the time of a knot.

        Args:
            index: the knot index.

        Returns:
            The knot time in seconds.
        """
        return self.t0 + index * self.tau

    def _newest_segment(self, state: "SplineState | None") -> int:
        """Return the newest segment that can be evaluated with the given state."""
        return self.last_idle_segment if state is None else state.grid.n

    def segments(
        self, k: int, state: "SplineState | None" = None
    ) -> tuple[PositionSegment, OrientationSegment]:
        """Assemble the control points of segment ``k``.

        Args:
            k: the segment index.
            state: the current filter state, needed for segments that are not idle.

        Returns:
            The position and orientation segments.

        Raises:
            OutOfSpanError: if the segment cannot be assembled.
        """
        newest = self._newest_segment(state)
        if k < self.first_segment or k > newest:
            raise OutOfSpanError(f"segment {k} is not available", self.span(state))
        positions = []
        deltas = []
        for index in range(k - 3, k + 1):
            if index in self._positions:
                positions.append(self._positions[index])
                deltas.append(self._deltas[index])
            else:
                # state holds indices n-3 .. n
                slot = index - (state.grid.n - 3)  # type: ignore[union-attr]
                positions.append(state.pos_rcp[slot])  # type: ignore[union-attr]
                deltas.append(state.ori_deltas[slot])  # type: ignore[union-attr]
        if k - 4 in self._anchors:
            anchor = self._anchors[k - 4]
        else:
            anchor = state.r_anchor  # type: ignore[union-attr]
        return (
            PositionSegment(points=np.stack(positions)),
            OrientationSegment(r_base=anchor, deltas=np.stack(deltas)),
        )

    def evaluate(
        self, t: npt.ArrayLike, state: "SplineState | None" = None
    ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Evaluate the posterior poses at arbitrary times.

        Args:
            t: times in seconds, shape (m,).
            state: the current filter state; without it only idle segments are used.

        Returns:
            Positions of shape (m, 3) and unit quaternions of shape (m, 4).

        Raises:
            OutOfSpanError: if a time lies outside the evaluable span.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        newest = self._newest_segment(state)
        span = self.span(state)
        if t.size and (np.any(t < span[0]) or np.any(t >= span[1])):
            raise OutOfSpanError("time outside the retired spline history", span)
        k = spline.KnotGrid(self.t0, self.tau, newest).segment_of(t)
        k = np.clip(k, self.first_segment, newest)
        positions = np.empty((t.size, 3))
        quaternions = np.empty((t.size, 4))
        for segment_index in np.unique(k):
            mask = k == segment_index
            pos_seg, ori_seg = self.segments(int(segment_index), state)
            u = np.clip((t[mask] - self.knot(int(segment_index) - 1)) / self.tau, 0.0, 1.0)
            positions[mask] = spline.position_eval(pos_seg, u)
            quaternions[mask] = spline.orientation_eval(ori_seg, u)
        return positions, quaternions

    def transform_points(
        self,
        t: npt.ArrayLike,
        points_body: npt.ArrayLike,
        state: "SplineState | None" = None,
    ) -> npt.NDArray[np.float64]:
        """Map body-frame points to the world frame with the pose at their own timestamps.

        Args:
            t: point timestamps in seconds, shape (m,).
            points_body: points in the body frame, shape (m, 3).
            state: the current filter state, if non-idle segments are involved.

        Returns:
            World-frame points of shape (m, 3).
        """
        positions, quaternions = self.evaluate(t, state)
        return so3_quat.rotate(quaternions, points_body) + positions

    def span(self, state: "SplineState | None" = None) -> tuple[float, float]:
        """Return the evaluable time span ``[start, end)``.

        Args:
            state: the current filter state, if non-idle segments are included.

        Returns:
            The span in seconds.
        """
        return self.knot(self.first_segment - 1), self.knot(self._newest_segment(state))
