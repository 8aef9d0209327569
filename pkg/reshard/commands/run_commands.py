"""
Execution subcommands.

run SCENARIO         schedule, load the simulated cluster, execute, verify
                     against canon and the oracle; --mode all runs every mode
ablate SCENARIO      all three modes in both directions (src→dst, dst→src)
                     with the naive/buffer-sync and buffer-sync/buffer-async
                     sim-time ratios

Exit 0 when every execution verified, 1 on any violation, oracle mismatch or
deadlock (OOM and infeasible budgets surface as errors with exit 1).
"""

import logging

from ..executor import MODES
from ..pipeline import prepare, reverse_scenario, simulate_all
from ..reports import render_ablation, render_exec_report
from .common import add_scenario_flags, emit, record, scenario_from_args

logger = logging.getLogger(__name__)


def cmd_run(args) -> int:
    scenario = scenario_from_args(args)
    prepared = prepare(scenario, budget=args.budget, split_oversized=args.split_oversized)
    modes = MODES if args.mode == "all" else (args.mode,)
    outcomes = simulate_all(prepared, modes, trace=args.trace)
    emit(render_exec_report(prepared, outcomes, trace=args.trace), args.dump)
    ok = all(o.ok for o in outcomes)
    for outcome in outcomes:
        record(args, "run", scenario.name, "ok" if outcome.ok else "fail", outcome.report)
    if not ok:
        logger.error("Verification failed for %s", scenario.name)
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    scenario = scenario_from_args(args)
    runs = []
    for direction in (scenario, reverse_scenario(scenario)):
        prepared = prepare(direction, budget=args.budget)
        outcomes = simulate_all(prepared, MODES)
        label = f"{direction.src.label()} -> {direction.dst.label()}"
        runs.append({"label": label, "outcomes": outcomes})
    emit(render_ablation(runs), args.dump)
    ok = all(o.ok for run in runs for o in run["outcomes"])
    record(args, "ablate", scenario.name, "ok" if ok else "fail")
    return 0 if ok else 1


def register(subparsers) -> None:
    run = subparsers.add_parser("run", help="Execute and verify a transition")
    add_scenario_flags(run)
    run.add_argument("--mode", choices=MODES + ("all",), default="buffer-async")
    run.add_argument("--seed", type=int, default=None, help="Payload seed (default: from the scenario)")
    run.add_argument("--trace", action="store_true", help="Append one line per message to the report")
    run.add_argument("--split-oversized", action="store_true",
                     help="Experimental: split steps larger than the budget into sub-stages")
    run.set_defaults(func=cmd_run)

    ablate = subparsers.add_parser("ablate", help="Compare the three execution modes")
    add_scenario_flags(ablate)
    ablate.add_argument("--seed", type=int, default=None)
    ablate.set_defaults(func=cmd_ablate)
