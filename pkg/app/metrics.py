"""Scene flow evaluation metrics against ground truth."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from app.core import F64, FlowField
from app.errors import InputError
from utils.constants import MetricThresholds, ThetaMode


class Metrics(BaseModel):
    """EPE [m], accuracies and outlier ratio [%], angular error [rad]."""

    model_config = ConfigDict(frozen=True)

    epe: float = Field(..., ge=0)
    acc_strict: float = Field(..., ge=0, le=100)
    acc_relaxed: float = Field(..., ge=0, le=100)
    outliers: float = Field(..., ge=0, le=100)
    angle_error: float = Field(..., ge=0, le=math.pi)
    n_points: int = Field(..., ge=1)


class MetricsSummary(BaseModel):
    """Mean metrics over several runs plus the median EPE."""

    mean: Metrics
    epe_median: float
    n_runs: int


def _check_pair(F: FlowField, F_gt: FlowField) -> None:
    if len(F) != len(F_gt):
        raise InputError(f"flow length {len(F)} does not match ground truth {len(F_gt)}")


def point_errors(F: FlowField, F_gt: FlowField) -> tuple[NDArray[F64], NDArray[F64]]:
    """
    Per-point absolute error e and relative error e / ||f_gt||.

    Zero ground-truth motion yields e_rel = +inf when e > 0 and 0 when e == 0.
    """
    _check_pair(F, F_gt)
    e = np.linalg.norm(F.vectors - F_gt.vectors, axis=1)
    gt_norm = np.linalg.norm(F_gt.vectors, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_rel = np.where(gt_norm > 0.0, e / np.where(gt_norm > 0.0, gt_norm, 1.0), np.inf)
    e_rel = np.where((gt_norm == 0.0) & (e == 0.0), 0.0, e_rel)
    return e, e_rel


def angular_errors(
    F: FlowField, F_gt: FlowField, mode: ThetaMode = ThetaMode.HOMOGENEOUS
) -> NDArray[F64]:
    """
    Per-point angle between predicted and ground-truth flow.

    homogeneous: vectors extended by a constant 1 and normalized.
    raw3d: plain 3D angle; points where either vector is zero are dropped.
    """
    _check_pair(F, F_gt)
    mode = ThetaMode(str(mode))
    u, u_gt = F.vectors, F_gt.vectors
    if mode is ThetaMode.HOMOGENEOUS:
        ones = np.ones((len(F), 1))
        u = np.hstack([u, ones])
        u_gt = np.hstack([u_gt, ones])
    else:
        keep = (np.linalg.norm(u, axis=1) > 0.0) & (np.linalg.norm(u_gt, axis=1) > 0.0)
        u, u_gt = u[keep], u_gt[keep]
    if u.shape[0] == 0:
        return np.zeros(0)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    u_gt = u_gt / np.linalg.norm(u_gt, axis=1, keepdims=True)
    cosine = np.clip((u * u_gt).sum(axis=1), -1.0, 1.0)
    return np.arccos(cosine)


def compute_metrics(
    F: FlowField, F_gt: FlowField, theta_mode: ThetaMode = ThetaMode.HOMOGENEOUS
) -> Metrics:
    """EPE, AS, AR, Out and mean angular error; each predicate evaluated independently."""
    e, e_rel = point_errors(F, F_gt)
    strict = (e < MetricThresholds.STRICT_ABS) | (e_rel < MetricThresholds.STRICT_REL)
    relaxed = (e < MetricThresholds.RELAXED_ABS) | (e_rel < MetricThresholds.RELAXED_REL)
    outlier = (e > MetricThresholds.OUTLIER_ABS) | (e_rel > MetricThresholds.OUTLIER_REL)
    theta = angular_errors(F, F_gt, theta_mode)
    return Metrics(
        epe=float(e.mean()),
        acc_strict=float(100.0 * strict.mean()),
        acc_relaxed=float(100.0 * relaxed.mean()),
        outliers=float(100.0 * outlier.mean()),
        angle_error=float(min(theta.mean(), math.pi)) if theta.size else 0.0,
        n_points=len(F),
    )


def summarize_metrics(runs: Sequence[Metrics]) -> MetricsSummary:
    """Average metrics field by field over runs (in the given order)."""
    if not runs:
        raise InputError("no runs to summarize")
    epes = [m.epe for m in runs]
    mean = Metrics(
        epe=float(np.mean(epes)),
        acc_strict=float(np.mean([m.acc_strict for m in runs])),
        acc_relaxed=float(np.mean([m.acc_relaxed for m in runs])),
        outliers=float(np.mean([m.outliers for m in runs])),
        angle_error=float(np.mean([m.angle_error for m in runs])),
        n_points=int(round(np.mean([m.n_points for m in runs]))),
    )
    return MetricsSummary(mean=mean, epe_median=float(np.median(epes)), n_runs=len(runs))
