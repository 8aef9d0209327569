"""
campaign — randomized (src, dst) pairs on the toy model, each run through
plan → schedule → execute → verify → oracle comparison.

--inject-fault adds one fault per trial and mode after a clean execution (one
corrupted element, or with --fault drop one missing transfer); a trial then
passes only when verification detects it.
"""

import logging

from ..campaign import DEFAULT_TRIALS, FAULT_KINDS, run_campaign
from ..executor import MODES
from ..pipeline import DEFAULT_SEED
from ..reports import render_campaign
from .common import emit, record

logger = logging.getLogger(__name__)


def cmd_campaign(args) -> int:
    modes = MODES if args.mode == "all" else (args.mode,)
    summary = run_campaign(
        trials=args.trials, seed=args.seed, max_world=args.max_world, modes=modes, inject=args.inject_fault,
        fault_kind=args.fault,
    )
    emit(render_campaign(summary), args.dump)
    record(args, "campaign", f"seed-{args.seed}", "ok" if summary.ok else "fail", trials=summary.results)
    return 0 if summary.ok else 1


def register(subparsers) -> None:
    campaign = subparsers.add_parser("campaign", help="Randomized verification campaign")
    campaign.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    campaign.add_argument("--seed", type=int, default=DEFAULT_SEED)
    campaign.add_argument("--max-world", type=int, default=16)
    campaign.add_argument("--mode", choices=MODES + ("all",), default="all")
    campaign.add_argument("--inject-fault", action="store_true", help="Inject one fault per trial and mode")
    campaign.add_argument("--fault", choices=FAULT_KINDS, default="corrupt")
    campaign.add_argument("--dump", default=None, metavar="PATH")
    campaign.set_defaults(func=cmd_campaign)
