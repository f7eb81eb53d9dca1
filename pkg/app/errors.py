"""Exception hierarchy for the scene flow toolkit."""

from pathlib import Path
from typing import Optional


class FlowRegError(Exception):
    """Base class for all domain errors raised by this package."""


class InputError(FlowRegError, ValueError):
    """Invalid array input: empty sets, non-finite values, shape mismatches."""


class ParseError(InputError):
    """Malformed file content, reported with the offending line number."""

    def __init__(self, path: str | Path, line: int, message: str):
        self.path = str(path)
        self.line = line
        self.reason = message
        super().__init__(f"{self.path}:{line}: {message}")


class ConfigError(FlowRegError):
    """Unknown or invalid configuration keys."""

    def __init__(self, message: str, keys: Optional[list[str]] = None):
        self.keys = keys or []
        super().__init__(message)


class DivergenceError(FlowRegError):
    """Optimization produced a non-finite loss."""

    def __init__(self, iteration: int, terms: dict[str, Optional[float]]):
        self.iteration = iteration
        self.terms = terms
        detail = ", ".join(f"{name}={value!r}" for name, value in terms.items())
        super().__init__(f"non-finite loss at iteration {iteration} ({detail})")
