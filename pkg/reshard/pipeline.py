"""
End-to-end pipeline shared by the CLI commands, the campaign and the scripts.

  prepare(scenario)   VPS → TransitionPlan → TransitionSchedule
  check(prepared)     structural audit without payloads: plan violations,
                      schedule completeness, layout agreement, XOR matching,
                      memory bound
  simulate(prepared)  load src state, take the oracle, execute one mode,
                      verify against canon and compare with the oracle
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .cluster import SimCluster, load_state, oracle_reshard, verify_state
from .errors import Violation
from .executor import MODES, ExecReport, execute
from .models import Scenario
from .planners import StateKind
from .routing import TransitionPlan, plan_scenario, validate_plan
from .scheduler import TransitionSchedule, build_schedule, check_layouts
from .vps import Vps, build_vps

logger = logging.getLogger(__name__)

DEFAULT_SEED = int(os.getenv("RESHARD_SEED", "0"))


@dataclass
class Prepared:
    scenario: Scenario
    vps: Vps
    plan: TransitionPlan
    schedule: TransitionSchedule
    budgets: List[int]

    @property
    def kinds(self) -> tuple:
        kinds = (StateKind.PARAMETER, StateKind.OPTIMIZER, StateKind.SCALAR)
        return kinds + ((StateKind.GRADIENT,) if self.plan.gradients == "migrate" else ())


@dataclass
class RunOutcome:
    report: ExecReport
    violations: List[Violation] = field(default_factory=list)
    oracle_match: bool = True

    @property
    def ok(self) -> bool:
        return not self.violations and self.oracle_match and not self.report.deadlocked


def prepare(
    scenario: Scenario,
    budget: Optional[int] = None,
    gradients: Optional[str] = None,
    split_oversized: bool = False,
    vps: Optional[Vps] = None,
) -> Prepared:
    scenario.check()
    vps = vps or build_vps(scenario.model)
    plan = plan_scenario(scenario, vps, gradients)
    budgets = [budget] * plan.num_devices if budget is not None else scenario.budgets()
    schedule = build_schedule(plan, scenario.topology, budgets, split_oversized=split_oversized)
    return Prepared(scenario=scenario, vps=vps, plan=plan, schedule=schedule, budgets=budgets)


def check(prepared: Prepared) -> List[Violation]:
    violations = list(validate_plan(prepared.plan, prepared.vps, prepared.scenario.dst).violations)
    violations += check_layouts(prepared.schedule, prepared.plan)
    logger.info("Structural check: %d violations", len(violations))
    return violations


def new_cluster(prepared: Prepared) -> SimCluster:
    scenario = prepared.scenario
    return SimCluster(scenario.topology, prepared.plan.num_devices, scenario.memory_cap)


def simulate(
    prepared: Prepared,
    mode: str,
    seed: Optional[int] = None,
    trace: bool = False,
    cluster: Optional[SimCluster] = None,
) -> RunOutcome:
    """Run one mode on a freshly loaded cluster unless `cluster` already holds src state."""
    seed = prepared.scenario.seed if seed is None else seed
    plan = prepared.plan
    world_map = plan.world_map
    if cluster is None:
        cluster = new_cluster(prepared)
        load_state(cluster, prepared.vps, plan.src_cfg, seed, world_map.src_devices)

    expected = oracle_reshard(
        cluster, prepared.vps, plan.src_cfg, plan.dst_cfg,
        world_map.src_devices, world_map.dst_devices, prepared.kinds,
    )
    report = execute(cluster, prepared.schedule, mode, trace=trace)
    if report.deadlocked:
        return RunOutcome(report=report, oracle_match=False)

    violations = verify_state(
        cluster, prepared.vps, plan.dst_cfg, seed, world_map.dst_devices,
        gradients=plan.gradients == "migrate",
    )
    oracle_match = cluster.snapshot(prepared.kinds) == expected
    outcome = RunOutcome(report=report, violations=violations, oracle_match=oracle_match)
    logger.info(
        "Verified %s: %d violations, oracle %s",
        mode, len(violations), "match" if oracle_match else "MISMATCH",
    )
    return outcome


def simulate_all(prepared: Prepared, modes: Sequence[str] = MODES, seed: Optional[int] = None,
                 trace: bool = False) -> List[RunOutcome]:
    return [simulate(prepared, mode, seed, trace) for mode in modes]


def reverse_scenario(scenario: Scenario) -> Scenario:
    """The same transition run backwards (dst → src), devices swapped with it."""
    world_map = scenario.world_map.model_copy(update={
        "src_devices": scenario.world_map.dst_devices,
        "dst_devices": scenario.world_map.src_devices,
    })
    return scenario.model_copy(update={
        "name": f"{scenario.name}-reverse", "src": scenario.dst, "dst": scenario.src, "world_map": world_map,
    })
