"""
Randomized verification campaign.

Each trial samples a valid (src, dst) pair on the toy model and runs
  prepare → structural check → execute (every requested mode) → verify
  → oracle comparison → memory-bound check
A trial passes when all of them are clean. With inject_fault, each mode is
followed by one fault and the trial passes only if verification notices it:
  corrupt  one stored element is overwritten after execution
  drop     one staged transfer is removed and the broken schedule re-executed
"""

import logging
import os
import random
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .cluster import inject_fault, load_state, verify_state
from .errors import ConfigError, ReshardError
from .executor import MODES, execute
from .models import ModelSpec, ParallelConfig, Scenario, TensorSpec, Topology
from .pipeline import Prepared, check, new_cluster, prepare, simulate
from .scheduler import drop_transfer
from .vps import Vps, build_vps

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = int(os.getenv("RESHARD_CAMPAIGN_TRIALS", "100"))
CAMPAIGN_BUDGET = 1 << 20
TP_CHOICES = (1, 2, 4)
ORDERS = ("pp-dp-tp", "pp-tp-dp", "dp-pp-tp")
FAULT_KINDS = ("corrupt", "drop")


def toy_model(num_layers: int = 4, num_experts: int = 4) -> ModelSpec:
    tensors = [TensorSpec(tensor_id="embed", shape=(8, 4), layer=0, tp_shard_axis=0)]
    for layer in range(num_layers):
        prefix = f"layers.{layer}"
        tensors += [
            TensorSpec(tensor_id=f"{prefix}.qkv", shape=(8, 4), layer=layer, tp_shard_axis=0),
            TensorSpec(tensor_id=f"{prefix}.proj", shape=(4, 8), layer=layer, tp_shard_axis=1),
            TensorSpec(tensor_id=f"{prefix}.norm", shape=(4,), layer=layer),
            TensorSpec(tensor_id=f"{prefix}.experts", shape=(num_experts, 8, 2), layer=layer,
                       tp_shard_axis=1, is_expert=True, expert_axis=0),
            TensorSpec(tensor_id=f"{prefix}.router", shape=(4, num_experts), layer=layer),
        ]
    return ModelSpec(tensors=tuple(tensors), num_layers=num_layers, num_experts=num_experts)


def sample_config(rng: random.Random, model: ModelSpec, max_world: int, zero_enabled: bool) -> ParallelConfig:
    while True:
        tp = rng.choice(TP_CHOICES)
        pp = rng.choice([p for p in (1, 2, 4) if p <= model.num_layers])
        max_dp = max_world // (tp * pp)
        if max_dp < 1:
            continue
        dp = rng.randint(1, max_dp)
        ep = rng.choice([e for e in (1, 2, 4) if dp % e == 0 and model.num_experts % e == 0])
        return ParallelConfig(dp=dp, tp=tp, pp=pp, ep=ep, zero_enabled=zero_enabled, rank_order=rng.choice(ORDERS))


def sample_pair(rng: random.Random, model: ModelSpec, max_world: int):
    zero = rng.random() < 0.5
    while True:
        src = sample_config(rng, model, max_world, zero)
        dst = sample_config(rng, model, max_world, zero)
        if src != dst:
            return src, dst


@dataclass
class TrialResult:
    index: int
    src: str
    dst: str
    status: str   # pass | fail | detected | missed
    detail: str = ""
    sim_times: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("pass", "detected")


@dataclass
class CampaignSummary:
    trials: int
    seed: int
    max_world: int
    inject_fault: bool
    fault_kind: str = "corrupt"
    results: List[TrialResult] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(r.ok for r in self.results)

    @property
    def failures(self) -> List[TrialResult]:
        return [r for r in self.results if not r.ok]

    @property
    def ok(self) -> bool:
        return not self.failures


def make_scenario(index: int, model: ModelSpec, src: ParallelConfig, dst: ParallelConfig, seed: int) -> Scenario:
    return Scenario(
        version=1, name=f"trial-{index}", model=model,
        topology=Topology(num_nodes=2, ranks_per_node=8),
        src=src, dst=dst, memory_budget=CAMPAIGN_BUDGET, seed=seed,
    )


def _detect_dropped(prepared: Prepared, mode: str, rng: random.Random) -> Tuple[str, str]:
    if not any(stage.transfers for stage in prepared.schedule.stages):
        return "pass", f"{mode}: no staged transfer to drop"
    broken, victim = drop_transfer(prepared.schedule, rng)
    plan, seed = prepared.plan, prepared.scenario.seed
    cluster = new_cluster(prepared)
    load_state(cluster, prepared.vps, plan.src_cfg, seed, plan.world_map.src_devices)
    report = execute(cluster, broken, mode)
    found = report.deadlocked or verify_state(cluster, prepared.vps, plan.dst_cfg, seed, plan.world_map.dst_devices)
    return ("detected" if found else "missed"), f"{mode}: dropped {victim.line()}"


def run_trial(
    index: int,
    scenario: Scenario,
    vps: Vps,
    modes: Sequence[str],
    fault: Optional[random.Random],
    fault_kind: str = "corrupt",
) -> TrialResult:
    result = TrialResult(index, scenario.src.label(), scenario.dst.label(), "pass")
    try:
        prepared = prepare(scenario, vps=vps)
        violations = check(prepared)
        if violations:
            result.status, result.detail = "fail", str(violations[0])
            return result
        for mode in modes:
            cluster = new_cluster(prepared)
            load_state(cluster, vps, scenario.src, scenario.seed, prepared.plan.world_map.src_devices)
            outcome = simulate(prepared, mode, cluster=cluster)
            result.sim_times[mode] = outcome.report.sim_time
            if outcome.report.deadlocked:
                result.status, result.detail = "fail", f"{mode}: deadlock {list(outcome.report.witness)}"
                return result
            if outcome.violations or not outcome.oracle_match:
                detail = str(outcome.violations[0]) if outcome.violations else "oracle mismatch"
                result.status, result.detail = "fail", f"{mode}: {detail}"
                return result
            if outcome.report.max_peak > min(prepared.budgets):
                result.status, result.detail = "fail", f"{mode}: peak {outcome.report.max_peak} exceeds budget"
                return result
            if fault is not None and fault_kind == "drop":
                result.status, result.detail = _detect_dropped(prepared, mode, fault)
                if result.status == "missed":
                    return result
            elif fault is not None:
                device, kind, k = inject_fault(cluster, fault)
                found = verify_state(cluster, vps, scenario.dst, scenario.seed, prepared.plan.world_map.dst_devices)
                result.status = "detected" if found else "missed"
                result.detail = f"{mode}: device {device} {kind.value} k={k}"
                if not found:
                    return result
    except ReshardError as exc:
        result.status, result.detail = "fail", f"{type(exc).__name__}: {exc}"
    return result


def run_campaign(
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    max_world: int = 16,
    modes: Sequence[str] = MODES,
    inject: bool = False,
    model: Optional[ModelSpec] = None,
    fault_kind: str = "corrupt",
) -> CampaignSummary:
    if fault_kind not in FAULT_KINDS:
        raise ConfigError(f"unknown fault kind {fault_kind!r}; expected one of {', '.join(FAULT_KINDS)}")
    rng = random.Random(seed)
    fault = random.Random(seed + 1) if inject else None
    model = model or toy_model()
    vps = build_vps(model)
    summary = CampaignSummary(trials=trials, seed=seed, max_world=max_world, inject_fault=inject, fault_kind=fault_kind)
    for index in range(trials):
        src, dst = sample_pair(rng, model, max_world)
        scenario = make_scenario(index, model, src, dst, rng.randrange(1 << 32))
        result = run_trial(index, scenario, vps, modes, fault, fault_kind)
        logger.debug("Trial %d %s -> %s: %s %s", index, result.src, result.dst, result.status, result.detail)
        summary.results.append(result)
    logger.info("Campaign: %d/%d trials passed", summary.passed, trials)
    return summary
