# Runtime configuration for the scene flow toolkit
# Loads settings from environment variables with sensible defaults

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

PROJECT_DIR = Path(__file__).parent

# .env in the project directory first, then the current working directory
load_dotenv(PROJECT_DIR / ".env")
load_dotenv()


def parse_bool_env(value: str, default: bool = False) -> bool:
    """Parse boolean environment variable. Case-insensitive, accepts true/yes/on/1."""
    if not value:
        return default
    return value.lower() in ("true", "yes", "on", "1")


def parse_int_env(value: str, default: int) -> int:
    """Parse integer environment variable, falling back to default on garbage."""
    try:
        return int(value.strip()) if value and value.strip() else default
    except ValueError:
        return default


def get_env_with_fallback(base_name: str, default: str = "") -> str:
    """Get environment variable with FLOWREG_ prefix priority fallback.

    Priority: FLOWREG_<base_name> > <base_name> > default
    """
    return os.getenv(f"FLOWREG_{base_name}") or os.getenv(base_name) or default


@dataclass
class Config:
    """Runtime settings loaded from environment variables."""

    # 0 = auto (physical cores), 1 = fully deterministic sequential mode
    threads: int = 0
    log_level: str = "INFO"
    log_file: str = ""
    preset: str = "lidar"
    config_path: str = ""
    no_color: bool = False

    @classmethod
    def from_env(cls) -> "Config":
        """Create configuration from environment variables."""
        return cls(
            threads=max(0, parse_int_env(get_env_with_fallback("THREADS", "0"), 0)),
            log_level=get_env_with_fallback("LOG_LEVEL", "INFO"),
            log_file=os.getenv("FLOWREG_LOG_FILE", ""),
            preset=get_env_with_fallback("PRESET", "lidar"),
            config_path=os.getenv("FLOWREG_CONFIG", ""),
            no_color=parse_bool_env(os.getenv("NO_COLOR", "")),
        )

    @property
    def deterministic(self) -> bool:
        """True when parallelism is capped to a single worker."""
        return self.threads == 1

    def default_config_file(self) -> Optional[Path]:
        """Fit config file named by FLOWREG_CONFIG, if any."""
        return Path(self.config_path) if self.config_path else None


config = Config.from_env()


def reload_config() -> Config:
    """Reload config from environment variables (tests and CLI re-entry)."""
    global config
    config = Config.from_env()
    return config
