# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Incremental world-frame point map with exact k-nearest-neighbor queries.

Points live in a voxel hash of per-voxel index lists. Single queries run a ring
search over the hash; batch queries use an immutable KD-tree snapshot of the
older points plus a small tree over the points inserted since the snapshot.
Both paths return the same neighbors, ordered by distance with ties broken by
insertion index.
"""

import functools
import logging

import numpy as np
import numpy.typing as npt
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

VoxelKey = tuple[int, int, int]


@functools.lru_cache(maxsize=64)
def _shell_offsets(radius: int) -> npt.NDArray[np.int64]:
    """Integer offsets whose Chebyshev norm equals ``radius``."""
    if radius == 0:
        return np.zeros((1, 3), dtype=np.int64)
    axis = np.arange(-radius, radius + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.max(np.abs(grid), axis=-1) == radius]


def _ordered(
    indices: npt.NDArray[np.int64], distances: npt.NDArray[np.float64], k: int
) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    """Sort candidates by (distance, index) along the last axis and keep ``k``."""
    order = np.lexsort((indices, distances), axis=-1)[..., :k]
    return (
        np.take_along_axis(indices, order, axis=-1),
        np.take_along_axis(distances, order, axis=-1),
    )


class LocalMap:
    """Single-writer, multi-reader incremental point index.

    Attrs:
        voxel_size: edge length of the hash voxels in meters.
        resolution: insertion de-duplication cell in meters, 0 disables it.
    """

    def __init__(
        self, voxel_size: float = 1.0, resolution: float = 0.0, rebuild_ratio: float = 0.25
    ):
        """Initialize an empty map.

        Args:
            voxel_size: edge length of the hash voxels in meters.
            resolution: a de-duplication cell already holding a point ignores new ones.
            rebuild_ratio: rebuild the snapshot once the unindexed tail exceeds this
                fraction of the snapshot size.

        Raises:
            ValueError: if a size is not positive.
        """
        if not voxel_size > 0.0 or resolution < 0.0 or not rebuild_ratio > 0.0:
            raise ValueError("map voxel size and rebuild ratio must be positive")
        self.voxel_size = voxel_size
        self.resolution = resolution
        self._rebuild_ratio = rebuild_ratio
        self._points = np.zeros((1024, 3))
        self._size = 0
        self._voxels: dict[VoxelKey, list[int]] = {}
        self._occupied: set[VoxelKey] = set()
        self._voxel_min = np.zeros(3, dtype=np.int64)
        self._voxel_max = np.zeros(3, dtype=np.int64)
        self._snapshot: cKDTree | None = None
        self._snapshot_size = 0
        self._tail: cKDTree | None = None
        self._tail_size = 0

    def __len__(self) -> int:
        """Return the number of stored points."""
        return self._size

    @property
    def points(self) -> npt.NDArray[np.float64]:
        """Stored points in insertion order, shape (size, 3), read-only view."""
        view = self._points[: self._size]
        view.flags.writeable = False
        return view

    def _voxel_of(self, points: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
        """Return the integer voxel coordinates of points."""
        return np.floor(points / self.voxel_size).astype(np.int64)

    def _deduplicate(self, points: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """Drop points whose de-duplication cell is taken."""
        if self.resolution <= 0.0 or not len(points):
            return points
        cells = np.floor(points / self.resolution).astype(np.int64)
        _, first = np.unique(cells, axis=0, return_index=True)
        first.sort()
        keep = [i for i in first if tuple(cells[i]) not in self._occupied]
        self._occupied.update(tuple(cells[i]) for i in keep)
        return points[keep]

    def insert(self, points: npt.ArrayLike) -> int:
        """Insert world-frame points.

        Args:
            points: points of shape (m, 3) in meters.

        Returns:
            The number of points actually stored.
        """
        points = self._deduplicate(np.asarray(points, dtype=float).reshape(-1, 3))
        count = len(points)
        if not count:
            return 0
        while self._size + count > len(self._points):
            self._points = np.concatenate([self._points, np.zeros_like(self._points)])
        start = self._size
        self._points[start : start + count] = points
        voxels = self._voxel_of(points)
        for offset, key in enumerate(map(tuple, voxels.tolist())):
            self._voxels.setdefault(key, []).append(start + offset)
        if start == 0:
            self._voxel_min = voxels.min(axis=0)
            self._voxel_max = voxels.max(axis=0)
        else:
            self._voxel_min = np.minimum(self._voxel_min, voxels.min(axis=0))
            self._voxel_max = np.maximum(self._voxel_max, voxels.max(axis=0))
        self._size += count
        return count

    def _ring_keys(self, center: npt.NDArray[np.int64], radius: int) -> list[VoxelKey]:
        """Voxel keys at Chebyshev distance ``radius`` from ``center`` that may be occupied."""
        shell = _shell_offsets(radius)
        if len(shell) <= len(self._voxels):
            return [tuple(key) for key in (center + shell).tolist()]  # type: ignore[misc]
        ring = np.max(np.abs(np.asarray(list(self._voxels), dtype=np.int64) - center), axis=-1)
        return [key for key, dist in zip(self._voxels, ring) if dist == radius]

    def knn(
        self, query: npt.ArrayLike, k: int
    ) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
        """Exact k-nearest neighbors of one point by voxel ring search.

        Args:
            query: the query point, shape (3,).
            k: number of neighbors.

        Returns:
            Indices and distances of the ``min(k, size)`` nearest points.
        """
        query = np.asarray(query, dtype=float)
        if not self._size or k <= 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        center = self._voxel_of(query)
        max_ring = int(max(np.max(center - self._voxel_min), np.max(self._voxel_max - center), 0))
        candidates: list[int] = []
        radius = 0
        while True:
            for key in self._ring_keys(center, radius):
                candidates.extend(self._voxels.get(key, ()))
            if radius >= max_ring:
                break
            if len(candidates) >= k:
                distances = np.linalg.norm(self._points[candidates] - query, axis=-1)
                # unseen points are at least radius voxels away
                if np.partition(distances, k - 1)[k - 1] < radius * self.voxel_size:
                    break
            radius += 1
        indices = np.asarray(candidates, dtype=np.int64)
        distances = np.linalg.norm(self._points[indices] - query, axis=-1)
        return _ordered(indices, distances, k)

    def _refresh_trees(self) -> list[tuple[cKDTree, int]]:
        """Return the snapshot and tail trees with their index offsets, rebuilding stale ones."""
        if self._snapshot is None or (
            self._size - self._snapshot_size > self._rebuild_ratio * self._snapshot_size
        ):
            self._snapshot = cKDTree(self._points[: self._size].copy())
            self._snapshot_size = self._size
            logger.debug("rebuilt map snapshot with %d points", self._size)
        trees = [(self._snapshot, 0)]
        if self._size > self._snapshot_size:
            if self._tail is None or self._tail_size != self._size:
                self._tail = cKDTree(self._points[self._snapshot_size : self._size].copy())
                self._tail_size = self._size
            trees.append((self._tail, self._snapshot_size))
        return trees

    @staticmethod
    def _query_tree(
        tree: cKDTree, queries: npt.NDArray[np.float64], k: int, offset: int
    ) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
        """Query up to ``k`` neighbors of a tree holding ``tree.n`` points."""
        k = min(k, tree.n)
        if k == 0:
            return np.zeros((len(queries), 0), dtype=np.int64), np.zeros((len(queries), 0))
        distances, indices = tree.query(queries, k=k)
        return (
            np.asarray(indices, dtype=np.int64).reshape(len(queries), k) + offset,
            np.asarray(distances).reshape(len(queries), k),
        )

    def knn_batch(
        self, queries: npt.ArrayLike, k: int
    ) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.float64]]:
        """Exact k-nearest neighbors of many points.

        Args:
            queries: query points of shape (m, 3).
            k: number of neighbors.

        Returns:
            Indices and distances of shape (m, min(k, size)).
        """
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        if not self._size or k <= 0 or not len(queries):
            return np.zeros((len(queries), 0), dtype=np.int64), np.zeros((len(queries), 0))
        trees = self._refresh_trees()
        # one extra neighbor per tree reveals ties at the k-th distance
        parts = [self._query_tree(tree, queries, k + 1, offset) for tree, offset in trees]
        indices, distances = _ordered(
            np.concatenate([part[0] for part in parts], axis=-1),
            np.concatenate([part[1] for part in parts], axis=-1),
            min(k, self._size),
        )
        tied = np.zeros(len(queries), dtype=bool)
        for (tree, _), (_, part_distances) in zip(trees, parts):
            if tree.n > k + 1:
                tied |= part_distances[:, -1] <= distances[:, -1]
        for row in np.flatnonzero(tied):
            indices[row], distances[row] = self.knn(queries[row], k)
        return indices, distances
