"""Shared fixtures."""

import logging

import numpy as np
import pytest

from utils.colored_logger import ColoredFormatter, PlainFormatter

ENV_VARS = (
    "FLOWREG_THREADS",
    "THREADS",
    "FLOWREG_LOG_LEVEL",
    "LOG_LEVEL",
    "FLOWREG_LOG_FILE",
    "FLOWREG_PRESET",
    "PRESET",
    "FLOWREG_CONFIG",
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Sequential deterministic mode and no stray user settings."""
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("FLOWREG_THREADS", "1")


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop the handlers main() installs so each test binds fresh streams."""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler.formatter, (ColoredFormatter, PlainFormatter)):
            root.removeHandler(handler)
            handler.close()
