"""
Loss ablation harness.

Fits every scene of a suite under each loss combination and averages the
metrics per combination. Rows come out in a fixed order regardless of how
many workers fitted the scenes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from app.flowmodel import FitConfig, fit, resolve_fit_config
from app.metrics import Metrics, MetricsSummary, compute_metrics, summarize_metrics
from app.synth import SynthScene, generate_scene, make_scene_spec
from app.types import AblationRow, KnSweepRow
from utils.colored_logger import setup_logger
from utils.constants import ThetaMode
from utils.parallel import ordered_map

logger = setup_logger(__name__)


def with_updates(cfg: FitConfig, **updates: Any) -> FitConfig:
    """Copy of cfg with validated field updates."""
    return resolve_fit_config(file_values=cfg.model_dump(), overrides=updates)


@dataclass(frozen=True, slots=True)
class Combination:
    """Which regularizers are switched on for one ablation row."""

    name: str
    smooth_on: bool
    cyc_on: bool
    surf_on: bool

    def apply(self, base: FitConfig) -> FitConfig:
        """
        Switch terms on or off in base.

        The k-NN smoothness baseline reuses the surface weight so the
        smooth and surf rows differ only in how clusters are built.
        """
        return with_updates(
            base,
            alpha_smooth=base.alpha_surf if self.smooth_on else 0.0,
            alpha_cyc=base.alpha_cyc if self.cyc_on else 0.0,
            alpha_surf=base.alpha_surf if self.surf_on else 0.0,
        )


ABLATION_COMBINATIONS: tuple[Combination, ...] = (
    Combination("none", smooth_on=False, cyc_on=False, surf_on=False),
    Combination("smooth", smooth_on=True, cyc_on=False, surf_on=False),
    Combination("cyc", smooth_on=False, cyc_on=True, surf_on=False),
    Combination("surf", smooth_on=False, cyc_on=False, surf_on=True),
    Combination("smooth+cyc", smooth_on=True, cyc_on=True, surf_on=False),
    Combination("cyc+surf", smooth_on=False, cyc_on=True, surf_on=True),
)


def default_suite(
    n_scenes: int = 20,
    seed: int = 0,
    source_points: int = 2048,
    background_points: Optional[int] = None,
    min_bodies: int = 2,
    max_bodies: int = 4,
    resample_target: bool = True,
) -> list[SynthScene]:
    """
    Seeded synthetic scenes with min_bodies..max_bodies rigid bodies.

    Scene i uses seed + i; body count cycles through the allowed range so
    the suite covers every count. Background defaults to a quarter of the
    source points.
    """
    if background_points is None:
        background_points = source_points // 4
    body_total = max(source_points - background_points, 0)
    counts = list(range(min_bodies, max_bodies + 1))
    scenes = []
    for i in range(n_scenes):
        bodies = counts[i % len(counts)]
        spec = make_scene_spec(
            n_bodies=bodies,
            points_per_body=body_total // max(bodies, 1),
            extra_points=body_total % max(bodies, 1),
            background_points=background_points,
            resample_target=resample_target,
            seed=seed + i,
        )
        scenes.append(generate_scene(spec))
    return scenes


def _evaluate_all(
    scenes: Sequence[SynthScene],
    configs: Sequence[FitConfig],
    runs: int,
    theta_mode: ThetaMode,
    workers: int,
) -> list[list[Metrics]]:
    """Metrics per config, each list ordered by (scene, run)."""
    tasks = [
        (c, s, run)
        for c in range(len(configs))
        for s in range(len(scenes))
        for run in range(runs)
    ]

    def evaluate(task: tuple[int, int, int]) -> Metrics:
        c, s, run = task
        scene = scenes[s]
        cfg = with_updates(configs[c], seed=configs[c].seed + run)
        result = fit(scene.X, scene.Y, cfg)
        return compute_metrics(result.flow, scene.F_gt, theta_mode)

    results = ordered_map(evaluate, tasks, workers)
    per_config = len(scenes) * runs
    return [results[c * per_config : (c + 1) * per_config] for c in range(len(configs))]


def _summary_fields(summary: MetricsSummary) -> dict[str, float | int]:
    return {
        "epe": summary.mean.epe,
        "epe_median": summary.epe_median,
        "acc_strict": summary.mean.acc_strict,
        "acc_relaxed": summary.mean.acc_relaxed,
        "outliers": summary.mean.outliers,
        "angle_error": summary.mean.angle_error,
        "n_runs": summary.n_runs,
    }


def run_ablation(
    scenes: Sequence[SynthScene],
    base_cfg: FitConfig,
    runs: int = 1,
    combinations: Sequence[Combination] = ABLATION_COMBINATIONS,
    theta_mode: ThetaMode = ThetaMode.HOMOGENEOUS,
    workers: int = 1,
    progress: Callable[[str], None] | None = None,
) -> list[AblationRow]:
    """
    Fit every scene under every combination and average the metrics.

    Args:
        scenes: Scenes with ground truth
        base_cfg: Supplies k, k_n and the term weights that a row switches on
        runs: Seeds per scene (base_cfg.seed + run)
        combinations: Rows to produce, in output order
        workers: Concurrent fits
    """
    configs = [combo.apply(base_cfg) for combo in combinations]
    logger.info(
        f"ablation: {len(combinations)} combinations x {len(scenes)} scenes x {runs} runs"
    )
    metrics = _evaluate_all(scenes, configs, runs, theta_mode, workers)

    rows: list[AblationRow] = []
    for combo, runs_metrics in zip(combinations, metrics):
        summary = summarize_metrics(runs_metrics)
        row = AblationRow(
            combination=combo.name,
            smooth_on=combo.smooth_on,
            cyc_on=combo.cyc_on,
            surf_on=combo.surf_on,
            **_summary_fields(summary),  # type: ignore[typeddict-item]
        )
        rows.append(row)
        if progress is not None:
            progress(f"{combo.name}: EPE {summary.mean.epe:.4f}")
    return rows


def sweep_kn(
    scenes: Sequence[SynthScene],
    base_cfg: FitConfig,
    kn_values: Sequence[int],
    runs: int = 1,
    theta_mode: ThetaMode = ThetaMode.HOMOGENEOUS,
    workers: int = 1,
) -> list[KnSweepRow]:
    """Full objective with different normal neighborhood sizes."""
    configs = [with_updates(base_cfg, k_n=int(k_n)) for k_n in kn_values]
    metrics = _evaluate_all(scenes, configs, runs, theta_mode, workers)
    rows: list[KnSweepRow] = []
    for k_n, runs_metrics in zip(kn_values, metrics):
        summary = summarize_metrics(runs_metrics)
        row = KnSweepRow(k_n=int(k_n), **_summary_fields(summary))  # type: ignore[typeddict-item]
        rows.append(row)
    return rows
