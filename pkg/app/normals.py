"""
Surface normals via local PCA and the 6D surface-aware descriptors built from them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core import F64, PointCloud, build_index
from app.errors import InputError
from utils.colored_logger import setup_logger
from utils.constants import LossDefaults, NumericConstants

logger = setup_logger(__name__)


@dataclass(frozen=True, slots=True)
class NormalField:
    """
    Per-point unit normals facing the viewpoint.

    Points whose neighborhood covariance has rank < 2 are flagged invalid
    and carry a zero vector.
    """

    normals: NDArray[F64]  # (N, 3)
    valid: NDArray[np.bool_]  # (N,)

    def __len__(self) -> int:
        return int(self.normals.shape[0])

    @property
    def n_invalid(self) -> int:
        return int((~self.valid).sum())


@dataclass(frozen=True, slots=True)
class DescriptorSet:
    """6D descriptors phi_i = (x_i, s * n_i)."""

    descriptors: NDArray[F64]  # (N, 6)
    normal_scale: float = LossDefaults.NORMAL_SCALE

    def __len__(self) -> int:
        return int(self.descriptors.shape[0])


def estimate_normals(
    cloud: PointCloud,
    k_n: int = LossDefaults.K_NORMALS,
    viewpoint: ArrayLike = (0.0, 0.0, 0.0),
    workers: int = 1,
) -> NormalField:
    """
    Estimate normals from the covariance of each point's k_n nearest neighbors.

    The neighborhood includes the point itself. The normal is the eigenvector
    of the smallest eigenvalue, flipped so that n . (viewpoint - x) >= 0.

    Args:
        cloud: Source cloud
        k_n: Neighborhood size (>= 3)
        viewpoint: Sensor position used for sign disambiguation
        workers: cKDTree worker count

    Returns:
        NormalField with validity flags for rank-deficient neighborhoods
    """
    if k_n < LossDefaults.MIN_K_NORMALS:
        raise InputError(f"degenerate neighborhood: k_n={k_n} < 3")
    n = len(cloud)
    if n < k_n:
        raise InputError(f"degenerate neighborhood: cloud has {n} points < k_n={k_n}")
    view = np.asarray(viewpoint, dtype=np.float64).reshape(3)

    pts = cloud.points
    neighborhoods = build_index(pts, workers=workers).query(pts, k_n)
    local = pts[neighborhoods]  # (N, k_n, 3)
    centered = local - local.mean(axis=1, keepdims=True)
    covs = np.einsum("nki,nkj->nij", centered, centered) / k_n

    # eigh returns eigenvalues in ascending order
    eigvals, eigvecs = np.linalg.eigh(covs)
    normals = eigvecs[:, :, 0].copy()

    largest = eigvals[:, 2]
    valid = (largest > 0.0) & (eigvals[:, 1] > NumericConstants.RANK_TOL * largest)

    facing = np.einsum("ni,ni->n", normals, view - pts)
    normals[facing < 0.0] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[~valid] = 0.0

    if not valid.all():
        logger.debug(f"{int((~valid).sum())}/{n} neighborhoods are rank-deficient")

    normals.setflags(write=False)
    valid.setflags(write=False)
    return NormalField(normals=normals, valid=valid)


def build_descriptors(
    cloud: PointCloud,
    normals: NormalField,
    normal_scale: float = LossDefaults.NORMAL_SCALE,
) -> DescriptorSet:
    """Concatenate positions with scaled normals; invalid normals contribute zeros."""
    if len(normals) != len(cloud):
        raise InputError(
            f"normal count {len(normals)} does not match cloud size {len(cloud)}"
        )
    if normal_scale < 0:
        raise InputError(f"normal_scale must be non-negative, got {normal_scale}")
    slot = normal_scale * np.where(normals.valid[:, None], normals.normals, 0.0)
    desc = np.hstack([cloud.points, slot])
    desc.setflags(write=False)
    return DescriptorSet(descriptors=desc, normal_scale=float(normal_scale))
