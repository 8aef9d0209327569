"""
reshard — command-line entrypoint.

Startup sequence:
  1. Load .env (if present)
  2. Parse arguments and configure logging (stderr only; stdout carries dumps
     and reports)
  3. Register subcommand groups
  4. Dispatch, mapping errors to the exit-code contract:
       0 success, 1 plan/verification/simulation failure, 2 input error

Usage: python -m reshard <plan|verify|run|ablate|campaign|scale|history> ...
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from . import __version__
from .commands.campaign_commands import register as register_campaign
from .commands.history_commands import register as register_history
from .commands.plan_commands import register as register_plan
from .commands.run_commands import register as register_run
from .commands.scale_commands import register as register_scale
from .errors import ReshardError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reshard",
        description="Online resharding planner and deterministic cluster simulator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--db", default=None, metavar="PATH", help="Run ledger (default: RESHARD_DB_PATH)")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging and tracebacks on errors")
    subparsers = parser.add_subparsers(dest="command", required=True)

    register_plan(subparsers)
    register_run(subparsers)
    register_campaign(subparsers)
    register_scale(subparsers)
    register_history(subparsers)
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else os.getenv("RESHARD_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level,
        format="%(asctime)s  %(levelname)-8s  %(name)s  %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except ReshardError as exc:
        logger.error("%s", exc, exc_info=args.verbose)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
