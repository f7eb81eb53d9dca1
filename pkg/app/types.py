"""Type definitions for the application."""

from typing import TypedDict


class AblationRow(TypedDict):
    """Averaged metrics of one loss combination over all scenes and runs."""

    combination: str
    smooth_on: bool
    cyc_on: bool
    surf_on: bool
    epe: float
    epe_median: float
    acc_strict: float
    acc_relaxed: float
    outliers: float
    angle_error: float
    n_runs: int


class KnSweepRow(TypedDict):
    """Averaged metrics of the full objective for one normal neighborhood size."""

    k_n: int
    epe: float
    epe_median: float
    acc_strict: float
    acc_relaxed: float
    outliers: float
    angle_error: float
    n_runs: int


class GradcheckTrial(TypedDict):
    """Outcome of one finite-difference comparison."""

    trial: int
    variant: str
    n_points: int
    rel_error: float
    resamples: int
