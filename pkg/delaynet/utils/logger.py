"""
delaynet/utils/logger.py

Structured logging setup for delaynet using Loguru.

Design Decisions:
- JSON format for batch runs (sweeps on a cluster), coloured text for
  interactive use at a terminal.
- A run correlation ID is kept in a ContextVar so every log line of one
  CLI invocation (including worker threads started from it) carries it.
- Numerical arrays are never logged; only shapes, sizes and summary
  scalars are bound as extras.
"""

from __future__ import annotations

import json
import os
import sys
import uuid
from contextvars import ContextVar
from datetime import datetime, timezone
from typing import Any

from loguru import logger

run_id_ctx: ContextVar[str] = ContextVar("run_id", default="")


def _json_serialiser(record: dict[str, Any]) -> str:
    """Serialise a record to one JSON line, injecting the run ID."""
    payload = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "level": record["level"].name,
        "logger": record["name"],
        "message": record["message"],
        "run_id": run_id_ctx.get(""),
        "module": record["module"],
        "function": record["function"],
        "line": record["line"],
    }
    if record.get("extra"):
        payload.update(record["extra"])

    # Loguru treats the returned string as a format template
    return json.dumps(payload, default=str).replace("{", "{{").replace("}", "}}") + "\n"


def setup_logging(
    level: str = "INFO",
    log_format: str = "text",
    log_file: str | None = None,
) -> None:
    """
    Configure package-wide logging.

    Args:
        level: Log level string (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        log_format: 'json' for structured output, 'text' for human-readable.
        log_file: Optional file path for persistent log storage.
    """
    logger.remove()

    if log_format == "json":
        logger.add(
            sys.stderr,
            format=_json_serialiser,  # type: ignore[arg-type]
            level=level.upper(),
            serialize=False,
            backtrace=False,
            diagnose=False,
        )
    else:
        logger.add(
            sys.stderr,
            format=(
                "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
                "<level>{level: <8}</level> | "
                "<cyan>{name}</cyan>:<cyan>{line}</cyan> | "
                "<level>{message}</level>"
            ),
            level=level.upper(),
            colorize=True,
            backtrace=True,
            diagnose=False,
        )

    if log_file:
        logger.add(
            log_file,
            rotation="100 MB",
            retention="30 days",
            compression="gz",
            level=level.upper(),
            serialize=True,
        )

    logger.debug("Logging initialised", level=level, format=log_format)


def new_run_id() -> str:
    """Start a new correlation ID for the current CLI invocation."""
    run_id = uuid.uuid4().hex[:12]
    run_id_ctx.set(run_id)
    return run_id


def get_logger(name: str) -> "logger":  # type: ignore[valid-type]
    """Return a module-specific logger bound with its name."""
    return logger.bind(logger_name=name)


# ── Initialise from environment on import ────────────────────
setup_logging(
    level=os.getenv("LOG_LEVEL", "INFO"),
    log_format=os.getenv("LOG_FORMAT", "text"),
)
