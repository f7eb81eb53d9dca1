"""Config file loader - loads flat YAML fit configurations."""

from pathlib import Path
from typing import Any, Dict

import yaml

from app.errors import ConfigError

EXAMPLE_CONFIG = """# flowreg fit configuration
# Priority: CLI flags > this file > preset > defaults
# Keys are flat and mirror FitConfig; unknown keys are rejected.

# Preset supplying k / alpha_surf / alpha_cyc: stereo or lidar
preset: lidar

# Loss weights
alpha_smooth: 0.0
alpha_surf: 1.0
alpha_cyc: 10.0

# Neighborhood sizes
k: 4
k_n: 5
normal_scale: 1.0

# Flow parameterization: direct or coordnet
model: direct

# Optimizer
learning_rate: 0.008
max_iters: 2000
convergence_tol: 1.0e-5
patience: 30
seed: 0
"""


def load_config(config_path: Path) -> Dict[str, Any]:
    """
    Load a YAML config file as a flat mapping.

    Args:
        config_path: Path to the YAML file

    Returns:
        Dictionary of top-level keys to scalar (or list) values

    Raises:
        ConfigError: File is not a mapping, or a value is a nested mapping
        OSError: File cannot be read
    """
    with open(config_path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{config_path}: invalid YAML: {e}") from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{config_path}: expected a key-value mapping")

    nested = sorted(str(k) for k, v in data.items() if isinstance(v, dict))
    if nested:
        raise ConfigError(
            f"{config_path}: nested sections are not supported: {', '.join(nested)}",
            keys=nested,
        )
    return {str(k): v for k, v in data.items()}


def create_example_config(output_path: Path) -> None:
    """
    Write an example config file with all commonly tuned settings.

    Args:
        output_path: Where to write the example
    """
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(EXAMPLE_CONFIG)
