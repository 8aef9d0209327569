"""
Helpers shared by the subcommand modules: output routing, scenario loading
with overrides, and ledger writes.
"""

import asyncio
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional

from ..database import init_db, insert_run, insert_trials, resolve_db_path
from ..models import Scenario
from ..scenario import load_scenario

logger = logging.getLogger(__name__)


def emit(text: str, dump: Optional[str] = None) -> None:
    """Write to --dump PATH, or stdout."""
    if dump:
        Path(dump).write_text(text)
        logger.info("Wrote %s", dump)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def note(text: str) -> None:
    sys.stderr.write(text)
    sys.stderr.flush()


def scenario_from_args(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "gradients", None):
        updates["gradients"] = args.gradients
    return scenario.model_copy(update=updates) if updates else scenario


def add_scenario_flags(parser, budget: bool = True) -> None:
    parser.add_argument("scenario", help="Scenario YAML file")
    parser.add_argument("--gradients", choices=("drop", "migrate"), default=None,
                        help="Gradient handling (default: from the scenario)")
    parser.add_argument("--dump", default=None, metavar="PATH", help="Write output to PATH instead of stdout")
    if budget:
        parser.add_argument("--budget", type=int, default=None, help="Per-rank transient budget in bytes")


def record(args, command: str, scenario: str, status: str, report=None, trials: Iterable = ()) -> None:
    """Append one row to the run ledger when a ledger path is configured."""
    path = resolve_db_path(getattr(args, "db", None))
    if path is None:
        return

    async def _write():
        await init_db(path)
        run_id = await insert_run(
            path, command, scenario, status,
            mode=report.mode if report else None,
            sim_time=report.sim_time if report else None,
            bytes_moved=report.bytes_moved if report else None,
            messages=report.messages if report else None,
        )
        trial_list = list(trials)
        if trial_list:
            await insert_trials(path, run_id, trial_list)

    asyncio.run(_write())
