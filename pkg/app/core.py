"""
Point-cloud and flow containers plus exact k-nearest-neighbor search.

Neighbor queries are answered by a scipy cKDTree for candidate generation,
followed by an exact re-ranking on squared Euclidean distance with ties
broken by the lower point index. The re-ranking makes results identical to
exhaustive search under the same rule, independent of tree layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from app.errors import InputError
from utils.constants import ClusterKind, NumericConstants

F64: TypeAlias = np.float64
I64: TypeAlias = np.int64

Points: TypeAlias = NDArray[F64]  # (N, D)
Indices: TypeAlias = NDArray[I64]

SUPPORTED_DIMENSIONS = (3, 6)

# Extra candidates fetched beyond k so that boundary ties can be re-ranked
# without a second tree pass in the common case.
_TIE_WINDOW = 8


def as_matrix(values: ArrayLike, dims: Sequence[int] | int, what: str = "points") -> Points:
    """Convert input to a float64 (N, D) array and validate it."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1 and arr.size > 0:
        arr = arr.reshape(1, -1)
    if arr.size == 0:
        raise InputError(f"empty point set ({what})")
    allowed = (dims,) if isinstance(dims, int) else tuple(dims)
    if arr.ndim != 2 or arr.shape[1] not in allowed:
        raise InputError(
            f"{what} must have shape (N, D) with D in {allowed}, got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InputError(f"non-finite input ({what})")
    return arr


def squared_distances(a: NDArray[F64], b: NDArray[F64]) -> NDArray[F64]:
    """Squared Euclidean distance along the last axis, broadcasting a and b."""
    diff = a - b
    return (diff * diff).sum(axis=-1)


@dataclass(frozen=True, slots=True)
class PointCloud:
    """Ordered 3D positions (meters) captured at one instant."""

    points: Points

    def __post_init__(self) -> None:
        arr = as_matrix(self.points, 3, "point cloud")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def translated(self, offset: ArrayLike) -> PointCloud:
        return PointCloud(self.points + np.asarray(offset, dtype=np.float64))

    def warped(self, flow: FlowField) -> NDArray[F64]:
        """Positions displaced by a flow field defined on this cloud."""
        flow.check_matches(self)
        return self.points + flow.vectors


@dataclass(frozen=True, slots=True)
class FlowField:
    """One 3D displacement vector per source point."""

    vectors: Points

    def __post_init__(self) -> None:
        arr = as_matrix(self.vectors, 3, "flow field")
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @classmethod
    def zeros(cls, n: int) -> FlowField:
        return cls(np.zeros((n, 3)))

    def check_matches(self, cloud: PointCloud) -> None:
        if len(self) != len(cloud):
            raise InputError(
                f"flow length {len(self)} does not match cloud size {len(cloud)}"
            )


class NeighborIndex:
    """
    Immutable exact k-NN index over a fixed 3D or 6D point set.

    Safe for concurrent read-only queries once constructed.
    """

    def __init__(self, points: ArrayLike, workers: int = 1):
        data = as_matrix(points, SUPPORTED_DIMENSIONS, "indexed points")
        data.setflags(write=False)
        self._points = data
        self._tree = cKDTree(data)
        self._workers = workers

    @property
    def dimension(self) -> int:
        return int(self._points.shape[1])

    @property
    def size(self) -> int:
        return int(self._points.shape[0])

    @property
    def points(self) -> Points:
        return self._points

    def query(self, queries: ArrayLike, k: int) -> Indices:
        """
        k nearest indexed points for each query row.

        Args:
            queries: (Q, D) array (a single D-vector is accepted)
            k: Requested neighbor count, clamped to the index size

        Returns:
            (Q, min(k, M)) int64 array sorted by distance, then index
        """
        if k < 1:
            raise InputError(f"k must be >= 1, got {k}")
        q = as_matrix(queries, self.dimension, "query")
        n_queries = q.shape[0]
        k_eff = min(k, self.size)
        window = min(self.size, k_eff + _TIE_WINDOW)

        if window == self.size:
            cand = np.broadcast_to(np.arange(self.size, dtype=np.int64), (n_queries, window))
        else:
            _, cand = self._tree.query(q, k=window, workers=self._workers)
            cand = np.asarray(cand, dtype=np.int64).reshape(n_queries, window)

        d2 = squared_distances(self._points[cand], q[:, None, :])
        order = np.lexsort((cand, d2), axis=-1)
        cand = np.take_along_axis(cand, order, axis=-1)
        d2 = np.take_along_axis(d2, order, axis=-1)
        result = np.ascontiguousarray(cand[:, :k_eff])

        if window < self.size:
            # A point outside the window may tie or beat the k-th candidate
            # only if the k-th distance reaches the window's farthest one.
            kth = d2[:, k_eff - 1]
            unsafe = kth * (1.0 + NumericConstants.KNN_RADIUS_SLACK) >= d2[:, -1]
            for row in np.flatnonzero(unsafe):
                result[row] = self._query_ball(q[row], float(kth[row]), k_eff)
        return result

    def _query_ball(self, query: NDArray[F64], kth_sq: float, k: int) -> Indices:
        radius = np.sqrt(kth_sq) * (1.0 + NumericConstants.KNN_RADIUS_SLACK) + 1e-12
        cand = np.asarray(self._tree.query_ball_point(query, radius), dtype=np.int64)
        d2 = squared_distances(self._points[cand], query)
        order = np.lexsort((cand, d2))
        return cand[order][:k]

    def nearest(self, queries: ArrayLike) -> Indices:
        """Index of the single nearest point for each query row."""
        return self.query(queries, 1)[:, 0]


def build_index(points: ArrayLike, workers: int = 1) -> NeighborIndex:
    """Build an exact neighbor index over a 3D or 6D point set."""
    return NeighborIndex(points, workers=workers)


def knn(index: NeighborIndex, query: ArrayLike, k: int) -> list[int]:
    """k nearest neighbors of a single query, as an ordered list of indices."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dimension:
        raise InputError(
            f"query dimension {q.shape} does not match index dimension {index.dimension}"
        )
    return [int(i) for i in index.query(q, k)[0]]


@dataclass(frozen=True, slots=True)
class ClusterSet:
    """
    Rigid clusters in compressed-row form.

    members[offsets[i]:offsets[i + 1]] lists R(x_i).
    """

    offsets: Indices
    members: Indices
    kind: ClusterKind

    def __post_init__(self) -> None:
        offsets = np.asarray(self.offsets, dtype=np.int64)
        members = np.asarray(self.members, dtype=np.int64)
        if offsets.ndim != 1 or offsets.size < 1 or offsets[0] != 0:
            raise InputError("cluster offsets must start at 0")
        if offsets[-1] != members.size or np.any(np.diff(offsets) < 0):
            raise InputError("cluster offsets are inconsistent with members")
        n = offsets.size - 1
        if members.size and (members.min() < 0 or members.max() >= n):
            raise InputError("cluster member outside the source index range")
        offsets.setflags(write=False)
        members.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "members", members)

    @classmethod
    def from_rows(cls, rows: NDArray[I64], kind: ClusterKind) -> ClusterSet:
        """Build from a dense (N, k) neighbor table."""
        rows = np.asarray(rows, dtype=np.int64)
        n, width = rows.shape
        offsets = np.arange(n + 1, dtype=np.int64) * width
        return cls(offsets, rows.reshape(-1), kind)

    def __len__(self) -> int:
        return int(self.offsets.size - 1)

    @property
    def sizes(self) -> Indices:
        return np.diff(self.offsets)

    def cluster(self, i: int) -> list[int]:
        return [int(r) for r in self.members[self.offsets[i] : self.offsets[i + 1]]]

    def pairs(self) -> tuple[Indices, Indices]:
        """(i, r) index pairs, one per cluster membership."""
        owners = np.repeat(np.arange(len(self), dtype=np.int64), self.sizes)
        return owners, self.members
