"""
scale SCENARIO — elastic scale-event timelines from the scenario's
`transition` section.

--mode in-place|blocking|overlapped|all   (default: all)
--measure-switch                          take switch_cost from a simulated
                                          buffer-async run of the scenario
--step N                                  training step at the scale event
"""

import logging

from ..elastic import SCALE_MODES, GroupCache, simulate_scale_event
from ..errors import ConfigError
from ..pipeline import prepare, simulate
from ..reports import render_timeline
from .common import emit, record, scenario_from_args

logger = logging.getLogger(__name__)


def cmd_scale(args) -> int:
    scenario = scenario_from_args(args)
    transition = scenario.transition
    if transition is None:
        raise ConfigError("scenario has no transition section", ("transition",))
    if args.measure_switch:
        outcome = simulate(prepare(scenario), "buffer-async")
        transition = transition.model_copy(update={"switch_cost": outcome.report.sim_time})
        logger.info("Measured switch cost %.6fs", outcome.report.sim_time)

    cache = GroupCache()
    cache.get_or_create(scenario.src)
    _, group_cost = cache.get_or_create(scenario.dst)

    modes = SCALE_MODES if args.mode == "all" else (args.mode,)
    timelines = [
        simulate_scale_event(transition, mode, current_step=args.step,
                             group_cost=group_cost if mode == "in-place" else 0.0)
        for mode in modes
    ]
    emit(render_timeline(timelines, scenario.name), args.dump)
    record(args, "scale", scenario.name, "ok")
    return 0


def register(subparsers) -> None:
    scale = subparsers.add_parser("scale", help="Elastic scale-event timeline")
    scale.add_argument("scenario", help="Scenario YAML file with a transition section")
    scale.add_argument("--mode", choices=SCALE_MODES + ("all",), default="all")
    scale.add_argument("--measure-switch", action="store_true")
    scale.add_argument("--step", type=int, default=0)
    scale.add_argument("--dump", default=None, metavar="PATH")
    scale.set_defaults(func=cmd_scale)
