"""
Colored console logging and plain file logging for all flowreg components.
Console lines read "LEVEL:     component:message"; file lines carry a timestamp.
"""

import logging
import sys
from datetime import datetime
from pathlib import Path

ISO_DATETIME_FORMAT = "%Y-%m-%d %H:%M:%S"


class ColoredFormatter(logging.Formatter):
    """Level-colored console formatter with a fixed five-space gap after the level."""

    # ANSI color codes
    COLORS = {
        "DEBUG": "\033[36m",  # cyan
        "INFO": "\033[32m",  # green
        "WARNING": "\033[33m",  # yellow
        "ERROR": "\033[31m",  # red
        "CRITICAL": "\033[35m",  # magenta
    }
    RESET = "\033[0m"

    def __init__(self, use_color: bool = True):
        super().__init__()
        self.use_color = use_color

    def format(self, record):
        """
        Format log record as "LEVEL:     component:message".

        Args:
            record: LogRecord instance to format

        Returns:
            Formatted log message, colored when writing to a terminal
        """
        component = record.name
        message = record.getMessage()
        if record.exc_info:
            message = f"{message}\n{self.formatException(record.exc_info)}"

        if self.use_color:
            level_color = self.COLORS.get(record.levelname, "")
            return f"{level_color}{record.levelname}:{self.RESET}     {component}:{message}"
        return f"{record.levelname}:     {component}:{message}"


class PlainFormatter(logging.Formatter):
    """Plain formatter for file logging (no colors)."""

    def format(self, record):
        component = record.name
        message = record.getMessage()
        if record.exc_info:
            message = f"{message}\n{self.formatException(record.exc_info)}"
        timestamp = datetime.fromtimestamp(record.created).strftime(
            ISO_DATETIME_FORMAT
        )
        return f"{timestamp} {record.levelname:8} {component}:{message}"


def _parse_level(level: str | int | None) -> int:
    if isinstance(level, int):
        return level
    if not level:
        return logging.INFO
    resolved = logging.getLevelName(level.upper())
    return resolved if isinstance(resolved, int) else logging.INFO


def setup_logger(name: str) -> logging.Logger:
    """
    Get a component logger that propagates to the root handlers.

    Args:
        name: Logger name (usually __name__)

    Returns:
        Logger instance
    """
    logger = logging.getLogger(name)
    logger.propagate = True
    return logger


def setup_file_logging(log_file: str | Path) -> str:
    """
    Add a plain-text file handler to the root logger.

    Args:
        log_file: Path of the log file (parent directories are created)

    Returns:
        Absolute path to the log file
    """
    log_path = Path(log_file)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    root_logger = logging.getLogger()
    for handler in root_logger.handlers:
        if isinstance(handler, logging.FileHandler) and handler.baseFilename == str(
            log_path.absolute()
        ):
            return str(log_path.absolute())

    file_handler = logging.FileHandler(log_path, mode="a")
    file_handler.setFormatter(PlainFormatter())
    root_logger.addHandler(file_handler)
    return str(log_path.absolute())


def configure_root_logging(
    level: str | int | None = None, no_color: bool = False
) -> None:
    """Install the colored stderr handler on the root logger (idempotent)."""
    root_logger = logging.getLogger()
    if not any(isinstance(h.formatter, ColoredFormatter) for h in root_logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        use_color = sys.stderr.isatty() and not no_color
        handler.setFormatter(ColoredFormatter(use_color=use_color))
        root_logger.addHandler(handler)

    root_logger.setLevel(_parse_level(level))
