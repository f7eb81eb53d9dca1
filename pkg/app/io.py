"""
File formats: CSV clouds/flows/labels, JSON reports and YAML fit configs.

Floats are written with 17 significant digits so that every write/read
round trip reproduces the exact float64 values.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, ValidationError

from app.core import F64, I64, FlowField, PointCloud
from app.errors import InputError, ParseError
from app.flowmodel import FitConfig, FitResult, resolve_fit_config
from app.metrics import Metrics
from app.normals import NormalField
from app.synth import SynthScene
from app.types import AblationRow, KnSweepRow
from utils.colored_logger import setup_logger
from utils.config_loader import load_config
from utils.constants import FileNames

logger = setup_logger(__name__)

CLOUD_HEADER = ("x", "y", "z")
FLOW_HEADER = ("fx", "fy", "fz")
BODY_ID_HEADER = ("body_id",)
NORMALS_HEADER = ("nx", "ny", "nz", "valid")
FLOAT_FORMAT = "%.17g"


def _read_table(path: Path, header: Sequence[str]) -> NDArray[F64]:
    """Parse a headed CSV of finite floats; errors carry 1-based line numbers."""
    path = Path(path)
    with open(path, "r") as f:
        lines = f.read().splitlines()

    if not lines:
        raise ParseError(path, 1, f"missing header, expected {','.join(header)}")
    found = tuple(cell.strip() for cell in lines[0].split(","))
    if found != tuple(header):
        raise ParseError(
            path, 1, f"bad header {lines[0]!r}, expected {','.join(header)}"
        )

    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(
                path, lineno, f"expected {len(header)} fields, got {len(cells)}"
            )
        try:
            values = [float(cell) for cell in cells]
        except ValueError:
            raise ParseError(path, lineno, f"not a number: {line!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(path, lineno, "non-finite value")
        rows.append(values)

    if not rows:
        raise ParseError(path, len(lines) + 1, "no data rows")
    return np.array(rows, dtype=np.float64)


def _write_table(
    path: Path, data: NDArray[Any], header: Sequence[str], fmt: str | Sequence[str]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, fmt=fmt, delimiter=",", header=",".join(header), comments="")


def read_cloud(path: Path) -> PointCloud:
    """Read an `x,y,z` CSV; row order defines point index."""
    return PointCloud(_read_table(path, CLOUD_HEADER))


def write_cloud(cloud: PointCloud, path: Path) -> None:
    _write_table(path, cloud.points, CLOUD_HEADER, FLOAT_FORMAT)


def read_flow(path: Path, cloud: Optional[PointCloud] = None) -> FlowField:
    """
    Read an `fx,fy,fz` CSV.

    Args:
        path: Flow file
        cloud: Associated source cloud; when given, row counts must agree
    """
    flow = FlowField(_read_table(path, FLOW_HEADER))
    if cloud is not None and len(flow) != len(cloud):
        raise InputError(
            f"{path}: flow has {len(flow)} rows, source cloud has {len(cloud)} points"
        )
    return flow


def write_flow(flow: FlowField, path: Path) -> None:
    _write_table(path, flow.vectors, FLOW_HEADER, FLOAT_FORMAT)


def read_body_ids(path: Path) -> NDArray[I64]:
    values = _read_table(path, BODY_ID_HEADER)[:, 0]
    if not np.all(values == np.round(values)) or np.any(values < 0):
        raise InputError(f"{path}: body ids must be non-negative integers")
    return values.astype(np.int64)


def write_body_ids(body_id: NDArray[I64], path: Path) -> None:
    _write_table(path, np.asarray(body_id, dtype=np.int64).reshape(-1, 1), BODY_ID_HEADER, "%d")


def write_normals(normals: NormalField, path: Path) -> None:
    """Normals plus a 0/1 validity column."""
    data = np.hstack([normals.normals, normals.valid[:, None].astype(np.float64)])
    _write_table(path, data, NORMALS_HEADER, [FLOAT_FORMAT] * 3 + ["%d"])


# ============ Scene directories ============


def write_scene(scene: SynthScene, directory: Path) -> list[Path]:
    """Write source, target, ground-truth flow and body ids into directory."""
    directory = Path(directory)
    names = (FileNames.SOURCE, FileNames.TARGET, FileNames.GT_FLOW, FileNames.BODY_ID)
    paths = [directory / name for name in names]
    write_cloud(scene.X, paths[0])
    write_cloud(scene.Y, paths[1])
    write_flow(scene.F_gt, paths[2])
    write_body_ids(scene.body_id, paths[3])
    return paths


def read_scene(directory: Path) -> SynthScene:
    """
    Load a scene written by write_scene.

    A missing body id file labels every point as background.
    """
    directory = Path(directory)
    X = read_cloud(directory / FileNames.SOURCE)
    Y = read_cloud(directory / FileNames.TARGET)
    F_gt = read_flow(directory / FileNames.GT_FLOW, X)
    body_path = directory / FileNames.BODY_ID
    if body_path.exists():
        body_id = read_body_ids(body_path)
        if body_id.size != len(X):
            raise InputError(f"{body_path}: {body_id.size} labels for {len(X)} points")
    else:
        body_id = np.zeros(len(X), dtype=np.int64)
    return SynthScene(X=X, Y=Y, F_gt=F_gt, body_id=body_id)


def find_scene_dirs(root: Path) -> list[Path]:
    """root itself when it holds a scene, else its scene subdirectories (sorted)."""
    root = Path(root)
    if (root / FileNames.SOURCE).exists():
        return [root]
    found = sorted(p for p in root.iterdir() if (p / FileNames.SOURCE).exists())
    if not found:
        raise InputError(f"{root}: no scenes found (expected {FileNames.SOURCE})")
    return found


# ============ Reports ============


class LossSummary(BaseModel):
    """Per-term loss values at the first, best and last iterations."""

    model_config = ConfigDict(extra="forbid")

    iterations: int
    best_iteration: int
    converged: bool
    initial: dict[str, Optional[float]]
    best: dict[str, Optional[float]]
    final: dict[str, Optional[float]]

    @classmethod
    def from_result(cls, result: FitResult) -> "LossSummary":
        def as_terms(index: int) -> dict[str, Optional[float]]:
            record = result.history[index]
            return {
                "dist": record.dist,
                "smooth": record.smooth,
                "surf": record.surf,
                "cyc": record.cyc,
                "total": record.total,
            }

        return cls(
            iterations=result.iterations,
            best_iteration=result.best_iteration,
            converged=result.converged,
            initial=as_terms(0),
            best=result.best.terms(),
            final=as_terms(-1),
        )


class ReportFile(BaseModel):
    """JSON run report; runtime_seconds is null in deterministic mode."""

    model_config = ConfigDict(extra="forbid")

    command: str
    seed: Optional[int] = None
    config: Optional[dict[str, Any]] = None
    losses: Optional[LossSummary] = None
    metrics: Optional[Metrics] = None
    theta_mode: Optional[str] = None
    runtime_seconds: Optional[float] = None


def write_report(report: ReportFile, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n")


def read_report(path: Path) -> ReportFile:
    text = Path(path).read_text()
    try:
        return ReportFile.model_validate_json(text)
    except ValidationError as e:
        raise InputError(f"{path}: invalid report: {e.errors()[0]['msg']}") from e


def read_config(
    path: Path,
    preset: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> FitConfig:
    """
    Load a flat YAML fit config and resolve it against preset and overrides.

    Raises:
        ConfigError: Unknown key (named in the message) or invalid value
    """
    values = load_config(Path(path))
    cfg = resolve_fit_config(preset=preset, file_values=values, overrides=overrides)
    logger.debug(f"Loaded fit config from {path}: {sorted(values)}")
    return cfg


# ============ Ablation tables ============

ABLATION_COLUMNS = (
    "combination",
    "smooth_on",
    "cyc_on",
    "surf_on",
    "epe",
    "epe_median",
    "acc_strict",
    "acc_relaxed",
    "outliers",
    "angle_error",
    "n_runs",
)


KN_SWEEP_COLUMNS = (
    "k_n",
    "epe",
    "epe_median",
    "acc_strict",
    "acc_relaxed",
    "outliers",
    "angle_error",
    "n_runs",
)


def _write_rows(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for column in columns:
            value = row[column]
            if isinstance(value, bool):
                cells.append(str(int(value)))
            elif isinstance(value, float):
                cells.append(FLOAT_FORMAT % value)
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def write_ablation_table(rows: Sequence[AblationRow], path: Path) -> None:
    """Plot-ready CSV with one line per loss combination, in the given order."""
    _write_rows(rows, ABLATION_COLUMNS, path)


def write_sweep_table(rows: Sequence[KnSweepRow], path: Path) -> None:
    """One line per normal neighborhood size."""
    _write_rows(rows, KN_SWEEP_COLUMNS, path)
