"""
Command-line interface.

Subcommands generate scenes, fit and evaluate flows, estimate normals, run
the gradient check and the loss ablations. Every command exits 0 on
success, 1 with a one-line diagnostic on domain or I/O errors and 2 on
unexpected failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from app.ablation import default_suite, run_ablation, sweep_kn
from app.errors import FlowRegError
from app.flowmodel import FitConfig, fit, resolve_fit_config
from app.gradcheck import gradcheck
from app.io import (
    LossSummary,
    ReportFile,
    find_scene_dirs,
    read_cloud,
    read_config,
    read_flow,
    read_scene,
    write_ablation_table,
    write_flow,
    write_normals,
    write_report,
    write_scene,
    write_sweep_table,
)
from app.metrics import compute_metrics
from app.normals import estimate_normals
from app.synth import SynthScene, generate_scene, make_scene_spec
from config import Config, reload_config
from utils.colored_logger import configure_root_logging, setup_file_logging, setup_logger
from utils.config_loader import create_example_config
from utils.constants import (
    LossDefaults,
    ModelVariant,
    Preset,
    SceneLayout,
    SynthDefaults,
    ThetaMode,
)
from utils.parallel import kdtree_workers, resolve_workers

logger = setup_logger(__name__)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None


# ============ Argument parsing ============


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    """Flags that override FitConfig fields; unset flags leave lower layers alone."""
    group = parser.add_argument_group("fit configuration")
    group.add_argument("--preset", choices=[p.value for p in Preset])
    group.add_argument("--config", type=Path, help="flat YAML fit config")
    group.add_argument("--alpha-smooth", type=float, dest="alpha_smooth")
    group.add_argument("--alpha-surf", type=float, dest="alpha_surf")
    group.add_argument("--alpha-cyc", type=float, dest="alpha_cyc")
    group.add_argument("--k", type=int, dest="k")
    group.add_argument("--kn", type=int, dest="k_n")
    group.add_argument("--normal-scale", type=float, dest="normal_scale")
    group.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"))
    group.add_argument("--model", choices=[m.value for m in ModelVariant])
    group.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 64,64,64,64")
    group.add_argument("--lr", type=float, dest="learning_rate")
    group.add_argument("--max-iters", type=int, dest="max_iters")
    group.add_argument("--tol", type=float, dest="convergence_tol")
    group.add_argument("--patience", type=int)
    group.add_argument("--cyc-refresh-every", type=int, dest="cyc_refresh_every")
    group.add_argument("--seed", type=int)
    group.add_argument(
        "--theta-mode",
        choices=[m.value for m in ThetaMode],
        default=ThetaMode.HOMOGENEOUS.value,
    )


FIT_OVERRIDE_KEYS = (
    "preset",
    "alpha_smooth",
    "alpha_surf",
    "alpha_cyc",
    "k",
    "k_n",
    "normal_scale",
    "viewpoint",
    "model",
    "hidden",
    "learning_rate",
    "max_iters",
    "convergence_tol",
    "patience",
    "cyc_refresh_every",
    "seed",
)


def _add_scene_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scene-dir", type=Path, help="scene directory or parent of several")
    parser.add_argument("--scenes", type=int, default=20, help="generated suite size")
    parser.add_argument("--suite-seed", type=int, default=0)
    parser.add_argument("--points", type=int, default=2048, help="source points per scene")
    parser.add_argument("--runs", type=int, default=1, help="fit seeds per scene")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowreg",
        description="Optimization-based scene flow with surface-aware and cyclic smoothness",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic rigid scene")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--bodies", type=int, default=2)
    synth.add_argument(
        "--points",
        type=int,
        default=2048,
        help="body points, split evenly; the remainder goes to the first body",
    )
    synth.add_argument("--background", type=int, default=512)
    synth.add_argument(
        "--layout",
        choices=[layout.value for layout in SceneLayout],
        default=SceneLayout.SCATTERED.value,
    )
    synth.add_argument("--body-size", type=float, default=SynthDefaults.BODY_SIZE)
    synth.add_argument("--translation-min", type=float, default=SynthDefaults.TRANSLATION_MIN)
    synth.add_argument("--translation-max", type=float, default=SynthDefaults.TRANSLATION_MAX)
    synth.add_argument("--rotation-max", type=float, default=SynthDefaults.ROTATION_MAX)
    synth.add_argument("--ego", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument(
        "--resample-target", action=argparse.BooleanOptionalAction, default=False
    )
    synth.add_argument("--out", type=Path, required=True)
    synth.set_defaults(handler=cmd_synth)

    fit_p = sub.add_parser("fit", help="estimate the flow from source to target")
    fit_p.add_argument("--source", type=Path, required=True)
    fit_p.add_argument("--target", type=Path, required=True)
    fit_p.add_argument("--out", type=Path, required=True, help="flow CSV")
    fit_p.add_argument("--report", type=Path, help="JSON report (default: <out>.json)")
    fit_p.add_argument("--gt", type=Path, help="ground-truth flow for metrics")
    _add_fit_options(fit_p)
    fit_p.set_defaults(handler=cmd_fit)

    eval_p = sub.add_parser("eval", help="metrics of a flow against ground truth")
    eval_p.add_argument("--flow", type=Path, required=True)
    eval_p.add_argument("--gt", type=Path, required=True)
    eval_p.add_argument("--report", type=Path)
    eval_p.add_argument(
        "--theta-mode",
        choices=[m.value for m in ThetaMode],
        default=ThetaMode.HOMOGENEOUS.value,
    )
    eval_p.set_defaults(handler=cmd_eval)

    normals = sub.add_parser("normals", help="estimate surface normals")
    normals.add_argument("--cloud", type=Path, required=True)
    normals.add_argument("--kn", type=int, default=LossDefaults.K_NORMALS, dest="k_n")
    normals.add_argument("--viewpoint", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    normals.add_argument("--out", type=Path, required=True)
    normals.set_defaults(handler=cmd_normals)

    grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--trials", type=int, default=100)
    grad.set_defaults(handler=cmd_gradcheck)

    ablate = sub.add_parser("ablate", help="loss ablation table")
    _add_scene_options(ablate)
    _add_fit_options(ablate)
    ablate.add_argument("--out", type=Path, required=True, help="CSV table")
    ablate.set_defaults(handler=cmd_ablate)

    sweep = sub.add_parser("sweep-kn", help="full objective over normal neighborhood sizes")
    _add_scene_options(sweep)
    _add_fit_options(sweep)
    sweep.add_argument("--kn-values", type=_int_list, default=(3, 5, 10, 20))
    sweep.add_argument("--out", type=Path, required=True, help="CSV table")
    sweep.set_defaults(handler=cmd_sweep_kn)

    init = sub.add_parser("init-config", help="write an example fit config")
    init.add_argument("--out", type=Path, default=Path("flowreg.yaml"))
    init.add_argument("--force", action="store_true", help="overwrite an existing file")
    init.set_defaults(handler=cmd_init_config)
    return parser


# ============ Shared helpers ============


def resolve_cli_config(args: argparse.Namespace, settings: Config) -> FitConfig:
    """CLI flags > config file (--config or FLOWREG_CONFIG) > preset > defaults."""
    overrides: dict[str, Any] = {key: getattr(args, key, None) for key in FIT_OVERRIDE_KEYS}
    if overrides["viewpoint"] is not None:
        overrides["viewpoint"] = tuple(overrides["viewpoint"])
    config_file = args.config or settings.default_config_file()
    if config_file is not None:
        return read_config(config_file, preset=settings.preset, overrides=overrides)
    return resolve_fit_config(preset=settings.preset, overrides=overrides)


def _load_scenes(args: argparse.Namespace) -> list[SynthScene]:
    if args.scene_dir is not None:
        return [read_scene(d) for d in find_scene_dirs(args.scene_dir)]
    return default_suite(n_scenes=args.scenes, seed=args.suite_seed, source_points=args.points)


def _runtime(settings: Config, seconds: float) -> Optional[float]:
    """Wall time for the report; omitted in deterministic mode."""
    logger.info(f"runtime {seconds:.2f}s")
    return None if settings.deterministic else seconds


# ============ Commands ============


def cmd_synth(args: argparse.Namespace, settings: Config) -> int:
    bodies = args.bodies
    spec = make_scene_spec(
        n_bodies=bodies,
        points_per_body=args.points // bodies if bodies > 0 else 0,
        extra_points=args.points % bodies if bodies > 0 else 0,
        background_points=args.background,
        layout=args.layout,
        body_size=args.body_size,
        translation_min=args.translation_min,
        translation_max=args.translation_max,
        rotation_max=args.rotation_max,
        ego_translation=tuple(args.ego),
        noise_sigma=args.noise,
        resample_target=args.resample_target,
        seed=args.seed,
    )
    scene = generate_scene(spec)
    paths = write_scene(scene, args.out)
    print(f"wrote {len(scene.X)} source / {len(scene.Y)} target points to {args.out}")
    logger.debug(f"files: {', '.join(str(p) for p in paths)}")
    return 0


def cmd_fit(args: argparse.Namespace, settings: Config) -> int:
    cfg = resolve_cli_config(args, settings)
    X = read_cloud(args.source)
    Y = read_cloud(args.target)
    gt = read_flow(args.gt, X) if args.gt is not None else None
    preset = cfg.preset.value if cfg.preset is not None else "none"
    logger.info(
        f"fit: {len(X)} source / {len(Y)} target points, preset={preset}, "
        f"k={cfg.k}, alpha_surf={cfg.alpha_surf}, alpha_cyc={cfg.alpha_cyc}"
    )

    start = time.perf_counter()
    result = fit(X, Y, cfg, workers=kdtree_workers(settings.threads))
    elapsed = time.perf_counter() - start

    write_flow(result.flow, args.out)
    metrics = compute_metrics(result.flow, gt, args.theta_mode) if gt is not None else None
    report = ReportFile(
        command="fit",
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
        losses=LossSummary.from_result(result),
        metrics=metrics,
        theta_mode=args.theta_mode if metrics is not None else None,
        runtime_seconds=_runtime(settings, elapsed),
    )
    report_path = args.report or args.out.with_suffix(".json")
    write_report(report, report_path)

    line = f"best total loss {result.best.total:.6g} after {result.iterations} iterations"
    if metrics is not None:
        line += f", EPE {metrics.epe:.4f}, AS {metrics.acc_strict:.1f}%"
    print(line)
    return 0


def cmd_eval(args: argparse.Namespace, settings: Config) -> int:
    flow = read_flow(args.flow)
    gt = read_flow(args.gt)
    metrics = compute_metrics(flow, gt, args.theta_mode)
    report = ReportFile(command="eval", metrics=metrics, theta_mode=args.theta_mode)
    if args.report is not None:
        write_report(report, args.report)
    print(report.model_dump_json(indent=2))
    return 0


def cmd_normals(args: argparse.Namespace, settings: Config) -> int:
    cloud = read_cloud(args.cloud)
    normals = estimate_normals(
        cloud, args.k_n, tuple(args.viewpoint), workers=kdtree_workers(settings.threads)
    )
    write_normals(normals, args.out)
    print(f"wrote {len(normals)} normals to {args.out} ({normals.n_invalid} invalid)")
    return 0


def cmd_gradcheck(args: argparse.Namespace, settings: Config) -> int:
    report = gradcheck(args.seed, trials=args.trials, workers=resolve_workers(settings.threads))
    print(report.summary())
    return 0 if report.passed else 1


def cmd_ablate(args: argparse.Namespace, settings: Config) -> int:
    cfg = resolve_cli_config(args, settings)
    scenes = _load_scenes(args)
    start = time.perf_counter()
    rows = run_ablation(
        scenes,
        cfg,
        runs=args.runs,
        theta_mode=ThetaMode(args.theta_mode),
        workers=resolve_workers(settings.threads),
        progress=logger.info,
    )
    _runtime(settings, time.perf_counter() - start)
    write_ablation_table(rows, args.out)
    for row in rows:
        print(f"{row['combination']:<12} EPE {row['epe']:.4f}  AS {row['acc_strict']:.1f}%")
    return 0


def cmd_sweep_kn(args: argparse.Namespace, settings: Config) -> int:
    cfg = resolve_cli_config(args, settings)
    scenes = _load_scenes(args)
    rows = sweep_kn(
        scenes,
        cfg,
        args.kn_values,
        runs=args.runs,
        theta_mode=ThetaMode(args.theta_mode),
        workers=resolve_workers(settings.threads),
    )
    write_sweep_table(rows, args.out)
    for row in rows:
        print(f"k_n={row['k_n']:<4} EPE {row['epe']:.4f}")
    return 0


def cmd_init_config(args: argparse.Namespace, settings: Config) -> int:
    if args.out.exists() and not args.force:
        raise FlowRegError(f"{args.out} exists (use --force to overwrite)")
    create_example_config(args.out)
    print(f"wrote example config to {args.out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging and dispatch; returns the exit code."""
    args = build_parser().parse_args(argv)
    settings = reload_config()
    configure_root_logging("DEBUG" if args.verbose else settings.log_level, settings.no_color)
    if settings.log_file:
        setup_file_logging(settings.log_file)

    handler: Callable[[argparse.Namespace, Config], int] = args.handler
    try:
        return handler(args, settings)
    except (FlowRegError, OSError) as e:
        logger.error(str(e))
        return 1
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
