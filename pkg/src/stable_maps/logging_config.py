"""Logging setup shared by the command line and the experiments."""

import logging
import sys
from logging.config import dictConfig


def setup_logging(level: str = "INFO") -> None:
    """Configure package logging in a single, idempotent place.

    Call this once near process start (the CLI does it before dispatching).
    Safe to call multiple times; subsequent calls are no-ops.
    """
    if getattr(setup_logging, "_configured", False):  # idempotent guard
        return

    level = level.upper()
    dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {
                "default": {
                    "format": (
                        "%(asctime)s | %(levelname)-8s | %(name)s | "
                        "%(message)s"
                    ),
                },
            },
            "handlers": {
                "console": {
                    "class": "logging.StreamHandler",
                    "stream": sys.stderr,
                    "formatter": "default",
                    "level": level,
                },
            },
            "loggers": {
                "stable_maps": {
                    "handlers": ["console"],
                    "level": level,
                    "propagate": False,
                },
                # warnings.warn output, e.g. scipy integration warnings
                "py.warnings": {
                    "handlers": ["console"],
                    "level": "WARNING",
                    "propagate": False,
                },
            },
            "root": {"handlers": ["console"], "level": "WARNING"},
        }
    )
    logging.captureWarnings(True)

    setup_logging._configured = True
    logging.getLogger("stable_maps.logging_config").debug(
        "Logging configured (level=%s)", level
    )
