"""
delaynet/main.py

Command-line entry point for delaynet.

Startup sequence:
  1. Load environment variables from .env
  2. Parse arguments
  3. Resolve settings (config.yaml + profile overlay + environment)
  4. Configure structured logging and start a run ID
  5. Dispatch to the sub-command
  6. Write the metrics textfile when --metrics-file is given

Design Decisions:
- Sub-commands live in `delaynet/commands/`, one module per group, each
  exposing `register(subparsers)`; handlers take (args, settings) and
  return an exit status.
- Every DelaynetError is logged with its error code and mapped to its
  exit code. Anything else propagates with a traceback.
- CLI flags override settings for this invocation only.
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence

from dotenv import load_dotenv

# Load .env BEFORE importing anything that reads env vars
load_dotenv()

from delaynet import __version__
from delaynet.commands import series, training
from delaynet.utils.config import load_settings
from delaynet.utils.exceptions import DelaynetError
from delaynet.utils.logger import get_logger, new_run_id, setup_logging
from delaynet.utils.metrics import write_metrics

logger = get_logger(__name__)


def create_parser() -> argparse.ArgumentParser:
    """Build the argument parser; importable for tests without side effects."""
    parser = argparse.ArgumentParser(
        prog="delaynet",
        description=(
            "Embed a scalar time series, estimate its Lyapunov spectrum and train "
            "a multilayer perceptron on it by precision annealing."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--profile", default=None, help="Settings overlay (ci, paper, ...).")
    parser.add_argument("--config-dir", default=None, help="Directory holding config.yaml and overlays.")
    parser.add_argument("--log-level", default=None, help="Overrides logging.level.")
    parser.add_argument("--log-format", choices=["text", "json"], default=None)
    parser.add_argument("--metrics-file", default=None, help="Write Prometheus metrics here on exit.")

    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    series.register(subparsers)
    training.register(subparsers)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = create_parser().parse_args(argv)

    try:
        settings = load_settings(args.profile, args.config_dir)
    except DelaynetError as exc:
        setup_logging(level=args.log_level or "INFO", log_format=args.log_format or "text")
        logger.bind(error_code=exc.error_code).error("{} {}", exc.message, exc.detail)
        return exc.exit_code

    setup_logging(
        level=args.log_level or settings.logging.level,
        log_format=args.log_format or settings.logging.format,
        log_file=settings.logging.file,
    )
    run_id = new_run_id()
    logger.info("delaynet started", command=args.command, profile=settings.profile, run_id=run_id)

    try:
        return int(args.func(args, settings))
    except DelaynetError as exc:
        logger.bind(error_code=exc.error_code, command=args.command, **exc.extra).error(
            "{} {}", exc.message, exc.detail
        )
        return exc.exit_code
    finally:
        if args.metrics_file:
            write_metrics(args.metrics_file)


if __name__ == "__main__":
    sys.exit(main())
