"""
Centralized constants for the scene flow estimation toolkit.

This module consolidates enums, default hyperparameters, metric thresholds
and file names into a single location for better maintainability and type safety.
"""

from enum import Enum
from typing import Dict

__all__ = [
    "ClusterKind",
    "ModelVariant",
    "Preset",
    "ThetaMode",
    "SceneLayout",
    "BodyShape",
    "PresetDefaults",
    "LossDefaults",
    "OptimizerDefaults",
    "MetricThresholds",
    "NumericConstants",
    "SynthDefaults",
    "FileNames",
    "get_preset_defaults",
]


class ClusterKind(Enum):
    """Which rigid-cluster construction produced a ClusterSet."""

    KNN = "knn"
    SURF = "surf"
    CYC = "cyc"

    def __str__(self) -> str:
        return self.value


class ModelVariant(Enum):
    """Flow parameterization used by the optimizer."""

    DIRECT = "direct"
    COORDNET = "coordnet"

    def __str__(self) -> str:
        return self.value


class Preset(Enum):
    """Hyperparameter presets for dense (stereo) and sparse (LiDAR) clouds."""

    STEREO = "stereo"
    LIDAR = "lidar"

    def __str__(self) -> str:
        return self.value


class ThetaMode(Enum):
    """Angular error convention."""

    HOMOGENEOUS = "homogeneous"
    RAW3D = "raw3d"

    def __str__(self) -> str:
        return self.value


class SceneLayout(Enum):
    """Placement strategy of rigid bodies in synthetic scenes."""

    SCATTERED = "scattered"
    ADJACENT = "adjacent"

    def __str__(self) -> str:
        return self.value


class BodyShape(Enum):
    """Surface shapes available to the synthetic scene generator."""

    BOX = "box"
    SPHERE = "sphere"
    PLANE = "plane"

    def __str__(self) -> str:
        return self.value


class PresetDefaults:
    """Loss weights and neighborhood sizes per preset."""

    STEREO: Dict[str, float | int] = {
        "k": 32,
        "alpha_surf": 10.0,
        "alpha_cyc": 10.0,
    }
    LIDAR: Dict[str, float | int] = {
        "k": 4,
        "alpha_surf": 1.0,
        "alpha_cyc": 10.0,
    }


class LossDefaults:
    """Defaults shared by the loss terms."""

    K = 4
    K_NORMALS = 5
    NORMAL_SCALE = 1.0
    ALPHA_SMOOTH = 0.0
    ALPHA_SURF = 1.0
    ALPHA_CYC = 10.0
    MIN_K_NORMALS = 3


class OptimizerDefaults:
    """Adam and stopping-rule defaults for fit."""

    LEARNING_RATE = 0.008
    BETA1 = 0.9
    BETA2 = 0.999
    EPSILON = 1e-8
    MAX_ITERS = 2000
    CONVERGENCE_TOL = 1e-5
    PATIENCE = 30
    CYC_REFRESH_EVERY = 1
    LOG_EVERY = 100
    HIDDEN_LAYERS = (64, 64, 64, 64)


class MetricThresholds:
    """Thresholds of the scene flow metric suite (meters / ratios)."""

    STRICT_ABS = 0.05
    STRICT_REL = 0.05
    RELAXED_ABS = 0.1
    RELAXED_REL = 0.1
    OUTLIER_ABS = 0.3
    OUTLIER_REL = 0.1


class NumericConstants:
    """Tolerances used across numerical code."""

    RANK_TOL = 1e-10  # relative eigenvalue threshold for rank-deficient covariances
    KNN_RADIUS_SLACK = 1e-9  # relative slack when re-collecting tie candidates
    ROTATION_TOL = 1e-9
    GRADCHECK_STEP = 1e-5
    GRADCHECK_TOL = 1e-4


class SynthDefaults:
    """Defaults of the synthetic scene generator."""

    BODY_SIZE = 2.0
    TRANSLATION_MIN = 0.1
    TRANSLATION_MAX = 1.0
    ROTATION_MAX = 0.1
    ADJACENT_GAP = 0.1
    PLACEMENT_ATTEMPTS = 1000


class FileNames:
    """File names written by the synth command."""

    SOURCE = "source.csv"
    TARGET = "target.csv"
    GT_FLOW = "gt_flow.csv"
    BODY_ID = "body_id.csv"


def get_preset_defaults(preset: Preset | str) -> Dict[str, float | int]:
    """
    Return the loss settings of a preset.

    Args:
        preset: Preset enum member or its string value

    Returns:
        Copy of the preset's settings (k, alpha_surf, alpha_cyc)
    """
    preset = Preset(str(preset))
    if preset is Preset.STEREO:
        return dict(PresetDefaults.STEREO)
    return dict(PresetDefaults.LIDAR)
