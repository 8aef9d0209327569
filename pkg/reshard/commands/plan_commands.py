"""
Planning subcommands.

plan SCENARIO        byte-stable transfer dump (stdout or --dump); scalar and
                     dataloader summary on stderr; --schedule dumps the staged
                     schedule instead
verify SCENARIO      structural checks of plan and schedule without payloads:
                     plan violations, completeness, layout agreement, XOR
                     matching, memory bound

Exit 0 when clean, 1 with the violation listing on stderr.
"""

import logging

from ..pipeline import check, prepare
from ..reports import render_plan_summary
from ..routing import dump_plan, plan_scenario, validate_plan
from ..scheduler import build_schedule, dump_schedule
from .common import add_scenario_flags, emit, note, scenario_from_args

logger = logging.getLogger(__name__)


def cmd_plan(args) -> int:
    scenario = scenario_from_args(args)
    plan = plan_scenario(scenario)
    report = validate_plan(plan, plan.vps, scenario.dst)
    if args.schedule:
        budgets = [args.budget] * plan.num_devices if args.budget else scenario.budgets()
        emit(dump_schedule(build_schedule(plan, scenario.topology, budgets)), args.dump)
    else:
        emit(dump_plan(plan), args.dump)
    note(render_plan_summary(scenario, plan))
    for violation in report.violations:
        note(f"violation: {violation}\n")
    return 0 if report.ok else 1


def cmd_verify(args) -> int:
    scenario = scenario_from_args(args)
    prepared = prepare(scenario, budget=args.budget)
    violations = check(prepared)
    lines = [f"violation: {v}\n" for v in violations]
    emit("".join(lines) or f"{scenario.name}: plan and schedule ok\n", args.dump)
    return 0 if not violations else 1


def register(subparsers) -> None:
    plan = subparsers.add_parser("plan", help="Dump the transfer plan")
    add_scenario_flags(plan)
    plan.add_argument("--schedule", action="store_true", help="Dump the staged schedule instead")
    plan.set_defaults(func=cmd_plan)

    verify = subparsers.add_parser("verify", help="Structural checks of plan and schedule")
    add_scenario_flags(verify)
    verify.set_defaults(func=cmd_verify)
