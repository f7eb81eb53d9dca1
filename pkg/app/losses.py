"""
Self-supervised scene flow objective.

Four loss terms (nearest-neighbor distance, k-NN smoothness, surface-aware
smoothness, cyclic smoothness) and the three rigid-cluster constructions.
Every term returns its value together with the analytic gradient with
respect to the flow. Correspondences and cluster assignments are treated as
piecewise constant: they are recomputed from the current flow, never
differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy import sparse

from app.core import (
    F64,
    I64,
    ClusterSet,
    FlowField,
    NeighborIndex,
    PointCloud,
    build_index,
)
from app.errors import InputError
from app.normals import DescriptorSet
from utils.constants import ClusterKind, LossDefaults


@dataclass(frozen=True, slots=True)
class LossTerm:
    """Scalar loss value and its gradient w.r.t. each flow vector."""

    value: float
    grad: NDArray[F64]  # (N, 3)


@dataclass(frozen=True, slots=True)
class Correspondences:
    """target_index[i] is the index of y*_i, the target nearest to x_i + f_i."""

    target_index: NDArray[I64]

    def __len__(self) -> int:
        return int(self.target_index.size)


@dataclass(frozen=True, slots=True)
class LossWeights:
    """Weights and neighborhood sizes of the combined objective."""

    alpha_smooth: float = LossDefaults.ALPHA_SMOOTH
    alpha_surf: float = LossDefaults.ALPHA_SURF
    alpha_cyc: float = LossDefaults.ALPHA_CYC
    k: int = LossDefaults.K
    k_n: int = LossDefaults.K_NORMALS
    normal_scale: float = LossDefaults.NORMAL_SCALE

    def __post_init__(self) -> None:
        for name in ("alpha_smooth", "alpha_surf", "alpha_cyc", "normal_scale"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")
        if self.k < 1:
            raise InputError("k must be >= 1")


@dataclass(frozen=True, slots=True)
class LossBreakdown:
    """
    Values of every term, the weighted total and its gradient.

    surf is None when the term could not be evaluated (no descriptors).
    """

    dist: float
    smooth: float
    surf: Optional[float]
    cyc: float
    total: float
    grad_total: NDArray[F64]
    weights: LossWeights
    correspondences: Correspondences = field(repr=False)
    cyc_clusters: Optional[ClusterSet] = field(default=None, repr=False)

    @property
    def alpha_surf(self) -> float:
        return self.weights.alpha_surf

    @property
    def alpha_cyc(self) -> float:
        return self.weights.alpha_cyc

    def terms(self) -> dict[str, Optional[float]]:
        return {
            "dist": self.dist,
            "smooth": self.smooth,
            "surf": self.surf,
            "cyc": self.cyc,
            "total": self.total,
        }


def loss_dist(
    X: PointCloud,
    F: FlowField,
    Y: PointCloud,
    index_y: Optional[NeighborIndex] = None,
) -> tuple[LossTerm, Correspondences]:
    """
    Mean squared distance from each warped source point to its nearest target.

    grad_i = (2/|X|) (x_i + f_i - y*_i) with y*_i held fixed.
    """
    if index_y is None:
        index_y = build_index(Y.points)
    if index_y.dimension != 3:
        raise InputError("target index must be 3-dimensional")
    warped = X.warped(F)
    nearest = index_y.nearest(warped)
    residual = warped - index_y.points[nearest]
    n = len(X)
    value = float((residual * residual).sum() / n)
    grad = (2.0 / n) * residual
    return LossTerm(value, grad), Correspondences(nearest)


def _rows_excluding_self(index: NeighborIndex, queries: NDArray[F64], k: int) -> NDArray[I64]:
    """
    k nearest neighbors of every indexed point, dropping the point itself.

    When duplicates push the point out of its own k+1 list, the farthest
    candidate is dropped instead.
    """
    n = index.size
    k_eff = min(k, n - 1)
    rows = index.query(queries, k_eff + 1)
    keep = rows != np.arange(n, dtype=np.int64)[:, None]
    no_self = keep.all(axis=1)
    keep[no_self, -1] = False
    return rows[keep].reshape(n, k_eff)


def clusters_knn(X: PointCloud, k: int, workers: int = 1) -> ClusterSet:
    """R(x_i): the k nearest neighbors of x_i in X, excluding x_i."""
    if len(X) < 2:
        raise InputError("clusters need at least two source points")
    index = build_index(X.points, workers=workers)
    return ClusterSet.from_rows(_rows_excluding_self(index, X.points, k), ClusterKind.KNN)


def clusters_surf(descriptors: DescriptorSet, k: int, workers: int = 1) -> ClusterSet:
    """R_surf(x_i): k nearest neighbors of phi_i among all descriptors in 6D."""
    if len(descriptors) < 2:
        raise InputError("clusters need at least two source points")
    index = build_index(descriptors.descriptors, workers=workers)
    rows = _rows_excluding_self(index, descriptors.descriptors, k)
    return ClusterSet.from_rows(rows, ClusterKind.SURF)


def target_neighborhoods(
    index_y: NeighborIndex, targets: NDArray[I64], k: int
) -> NDArray[I64]:
    """
    N^k_Y(y_j) for the given target indices, always containing j itself.

    Returns an (len(targets), min(k, M) + 1) table whose last column repeats
    j; the repeat is harmless for set membership.
    """
    rows = index_y.query(index_y.points[targets], k)
    return np.hstack([rows, targets[:, None]])


def clusters_cyc(
    X: PointCloud,
    F: FlowField,
    Y: PointCloud,
    corr: Correspondences,
    k: int,
    index_y: Optional[NeighborIndex] = None,
) -> ClusterSet:
    """
    R_cyc(x_i) = { r : y*_r in N^k_Y(y*_i) }.

    A source point r joins x_i's cluster when its own matched target lies in
    the neighborhood of x_i's matched target; i always belongs to R_cyc(x_i).
    """
    F.check_matches(X)
    if len(corr) != len(X):
        raise InputError("correspondences do not match the source cloud")
    if index_y is None:
        index_y = build_index(Y.points)

    n, m = len(X), index_y.size
    matched = corr.target_index
    used = np.unique(matched)
    hood = target_neighborhoods(index_y, used, k)

    # targets_near[j, t] = 1  iff  t in N^k_Y(y_j), rows only for matched j
    near_rows = np.repeat(used, hood.shape[1])
    targets_near = sparse.csr_matrix(
        (np.ones(near_rows.size, dtype=np.int64), (near_rows, hood.reshape(-1))),
        shape=(m, m),
    )
    # matched_by[t, r] = 1  iff  y*_r == t
    matched_by = sparse.csr_matrix(
        (np.ones(n, dtype=np.int64), (matched, np.arange(n, dtype=np.int64))),
        shape=(m, n),
    )
    membership = (targets_near @ matched_by).tocsr()[matched]
    membership.sort_indices()
    return ClusterSet(
        offsets=np.asarray(membership.indptr, dtype=np.int64),
        members=np.asarray(membership.indices, dtype=np.int64),
        kind=ClusterKind.CYC,
    )


def loss_smooth(F: FlowField, clusters: ClusterSet) -> LossTerm:
    """
    Robust L1 smoothness within rigid clusters.

    value = (1/|X|) sum_i (1/|R_i|) sum_{r in R_i} ||f_i - f_r||_1
    The subgradient uses sign(0) = 0 and accumulates both sides of each pair.
    Empty clusters contribute nothing.
    """
    n = len(F)
    if len(clusters) != n:
        raise InputError(f"cluster set covers {len(clusters)} points, flow has {n}")

    owners, members = clusters.pairs()
    if owners.size == 0:
        return LossTerm(0.0, np.zeros((n, 3)))

    sizes = clusters.sizes.astype(np.float64)
    weight = 1.0 / (n * sizes[owners])
    diff = F.vectors[owners] - F.vectors[members]
    value = float((weight * np.abs(diff).sum(axis=1)).sum())

    step = np.sign(diff) * weight[:, None]
    grad = np.empty((n, 3))
    for axis in range(3):
        grad[:, axis] = np.bincount(owners, weights=step[:, axis], minlength=n) - (
            np.bincount(members, weights=step[:, axis], minlength=n)
        )
    return LossTerm(value, grad)


@dataclass
class ClusterCache:
    """Cluster sets that a caller may hold fixed between evaluations."""

    knn: Optional[ClusterSet] = None
    surf: Optional[ClusterSet] = None
    cyc: Optional[ClusterSet] = None


def total_loss(
    X: PointCloud,
    F: FlowField,
    Y: PointCloud,
    descriptors: Optional[DescriptorSet],
    weights: LossWeights,
    *,
    index_y: Optional[NeighborIndex] = None,
    cache: Optional[ClusterCache] = None,
    workers: int = 1,
) -> LossBreakdown:
    """
    Combined objective dist + a_smooth*smooth + a_surf*surf + a_cyc*cyc.

    Every term is evaluated and reported whatever its weight; a term adds to
    the gradient only when its weight is positive. surf is None when neither
    descriptors nor cached surface clusters are given. Clusters present in
    cache are reused; missing ones are computed from the current inputs
    (cyclic clusters from the current flow's correspondences).
    """
    F.check_matches(X)
    if index_y is None:
        index_y = build_index(Y.points, workers=workers)
    cache = cache or ClusterCache()

    dist_term, corr = loss_dist(X, F, Y, index_y)
    grad = dist_term.grad.copy()

    smooth = 0.0
    knn_set = cache.knn
    if knn_set is None and len(X) >= 2:
        knn_set = clusters_knn(X, weights.k, workers=workers)
    if knn_set is not None:
        term = loss_smooth(F, knn_set)
        smooth = term.value
        if weights.alpha_smooth > 0:
            grad += weights.alpha_smooth * term.grad

    surf: Optional[float] = None
    surf_set = cache.surf
    if surf_set is None and descriptors is not None:
        surf_set = clusters_surf(descriptors, weights.k, workers=workers)
    if surf_set is not None:
        term = loss_smooth(F, surf_set)
        surf = term.value
        if weights.alpha_surf > 0:
            grad += weights.alpha_surf * term.grad
    elif weights.alpha_surf > 0:
        raise InputError("surface smoothness requires descriptors or cached clusters")

    cyc_set = cache.cyc
    if cyc_set is None:
        cyc_set = clusters_cyc(X, F, Y, corr, weights.k, index_y)
    term = loss_smooth(F, cyc_set)
    cyc = term.value
    if weights.alpha_cyc > 0:
        grad += weights.alpha_cyc * term.grad

    total = (
        dist_term.value
        + weights.alpha_smooth * smooth
        + weights.alpha_surf * (surf or 0.0)
        + weights.alpha_cyc * cyc
    )
    return LossBreakdown(
        dist=dist_term.value,
        smooth=smooth,
        surf=surf,
        cyc=cyc,
        total=float(total),
        grad_total=grad,
        weights=weights,
        correspondences=corr,
        cyc_clusters=cyc_set,
    )
