# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""C(alpha) tests for unobserved parameter heterogeneity

Initialises console logging on stderr; stdout is reserved for reports.
"""
import logging
import sys

from calpha_het import config


def configure_logging(level: str | None = None) -> None:
    """Send log records to stderr at the configured level.

    Args:
        level: Level name; defaults to CALPHA_LOG_LEVEL. Unknown names
            fall back to INFO.
    """
    name = (level or config.LOGGING_LEVEL).upper()
    known = isinstance(logging.getLevelName(name), int)
    logging.basicConfig(
        level=name if known else logging.INFO,
        format=config.LOGGING_FORMAT,
        stream=sys.stderr
    )
    if not known:
        logging.getLogger(__name__).warning(
            f"Unknown log level {name!r}, using INFO"
        )


configure_logging()
