"""
State routing: from two parallel configurations to resolved point-to-point
transfers.

Pipeline (plan_transition):
  1. Build the WorldMap (identity, low ranks survive, or explicit devices)
  2. Run every enabled planner in ALL_PLANNERS → unresolved RoutingPlans
  3. resolve_peers: pick one source per recv fragment (intra-node first,
     then lowest src rank), emit SliceTransfers, rebuild send lists
  4. Attach the scalar broadcast, dataloader plan and dropped gradients

validate_plan audits a resolved plan and returns violations; dump_plan renders
the byte-stable line format used by goldens.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .errors import Violation
from .models import BatchConfig, ParallelConfig, PrecisionPolicy, Scenario, Topology, get_policy
from .planners import (
    ALL_PLANNERS,
    DataloaderPlan,
    RoutingPlan,
    ScalarBroadcast,
    SliceTransfer,
    StateKind,
    WorldMap,
    plan_dataset,
    plan_scalars,
    planner_for,
)
from .regions import RegionSet
from .vps import Vps, build_vps, project

logger = logging.getLogger(__name__)


@dataclass
class TransitionPlan:
    vps: Vps
    src_cfg: ParallelConfig
    dst_cfg: ParallelConfig
    world_map: WorldMap
    policy: PrecisionPolicy
    gradients: str
    routes: Tuple[RoutingPlan, ...]
    scalars: ScalarBroadcast
    dataset: Optional[DataloaderPlan] = None
    dropped: Dict[int, Dict[StateKind, RegionSet]] = field(default_factory=dict)

    @property
    def num_devices(self) -> int:
        return self.world_map.num_devices

    def route(self, kind: StateKind) -> Optional[RoutingPlan]:
        for route in self.routes:
            if route.state_kind == kind:
                return route
        return None

    def transfers(self) -> List[SliceTransfer]:
        """Every region transfer of every route, in dump order."""
        return sorted((t for route in self.routes for t in route.transfers()), key=SliceTransfer.sort_key)

    def scalar_transfers(self) -> List[SliceTransfer]:
        return [] if self.scalars.is_noop else self.scalars.transfers(self.vps.space)

    @property
    def bytes_moved(self) -> int:
        return sum(route.bytes_moved for route in self.routes)

    @property
    def bytes_retained(self) -> int:
        return sum(route.bytes_retained for route in self.routes)


@dataclass
class PlanReport:
    transfers: int
    bytes_moved: int
    bytes_retained: int
    violations: List[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def _planner(kind: StateKind):
    return planner_for(ALL_PLANNERS, kind)


def plan_parameters(vps: Vps, src_cfg: ParallelConfig, dst_cfg: ParallelConfig, world_map: WorldMap,
                    policy="bf16-fp32-mixed") -> RoutingPlan:
    return _planner(StateKind.PARAMETER).plan(vps, src_cfg, dst_cfg, world_map, get_policy(policy))


def plan_optimizer(vps: Vps, src_cfg: ParallelConfig, dst_cfg: ParallelConfig, world_map: WorldMap,
                   policy="bf16-fp32-mixed") -> RoutingPlan:
    return _planner(StateKind.OPTIMIZER).plan(vps, src_cfg, dst_cfg, world_map, get_policy(policy))


def _fragments(vps: Vps, region: RegionSet) -> List[Tuple[str, RegionSet]]:
    """Split a region into single-tensor, single-box or single-interval pieces."""
    pieces = [(tid, RegionSet(region.space, ((tid, (box,)),))) for tid, boxes in region.boxes for box in boxes]
    pieces += [(tid, RegionSet.from_flat(region.space, [iv])) for tid, iv in vps.split_flat(region.flat)]
    return pieces


def resolve_peers(plan: RoutingPlan, topo: Topology, balance: bool = False) -> RoutingPlan:
    """Assign one source per recv fragment and rebuild send/recv lists.

    With balance=True, ties within the preferred tier go to the candidate with
    the fewest bytes assigned so far instead of the lowest rank.
    """
    world_map = plan.world_map
    space = plan.vps.space
    chosen: Dict[Tuple[int, int], RegionSet] = {}
    load: Dict[int, int] = {}

    for device in sorted(plan.ranks):
        for frag in plan.ranks[device].pending:
            def preference(src_rank: int):
                src_device = world_map.src_devices[src_rank]
                remote = topo.node(src_device) != topo.node(device)
                return (remote, load.get(src_rank, 0) if balance else 0, src_rank)

            src_rank = min(frag.candidates, key=preference)
            key = (src_rank, frag.dst_rank)
            chosen[key] = chosen.get(key, RegionSet.empty(space)) | frag.region
            load[src_rank] = load.get(src_rank, 0) + plan.bytes_of(frag.region)

    transfers = []
    for (src_rank, dst_rank), region in sorted(chosen.items()):
        for tid, piece in _fragments(plan.vps, region):
            numel = piece.numel
            transfers.append(SliceTransfer(
                state_kind=plan.state_kind, tensor_id=tid, region=piece,
                src_rank=src_rank, dst_rank=dst_rank,
                src_device=world_map.src_devices[src_rank], dst_device=world_map.dst_devices[dst_rank],
                numel=numel, bytes=numel * plan.element_bytes[tid],
            ))
    transfers.sort(key=SliceTransfer.sort_key)

    ranks = {}
    for device, rp in plan.ranks.items():
        ranks[device] = replace(
            rp,
            send=[t for t in transfers if t.src_device == device],
            recv=[t for t in transfers if t.dst_device == device],
        )
    resolved = replace(plan, ranks=ranks, resolved=True)
    logger.debug("Resolved %s plan: %d transfers", plan.state_kind.value, len(transfers))
    return resolved


def validate_plan(plan, vps: Vps, dst_cfg: ParallelConfig) -> PlanReport:
    """Audit a resolved RoutingPlan or TransitionPlan; never raises on violations."""
    routes = plan.routes if isinstance(plan, TransitionPlan) else (plan,)
    violations: List[Violation] = []
    for route in routes:
        violations.extend(_validate_route(route, vps, dst_cfg))
    transfers = sum(len(route.transfers()) for route in routes)
    return PlanReport(
        transfers=transfers,
        bytes_moved=sum(route.bytes_moved for route in routes),
        bytes_retained=sum(route.bytes_retained for route in routes),
        violations=violations,
    )


def _validate_route(route: RoutingPlan, vps: Vps, dst_cfg: ParallelConfig) -> List[Violation]:
    kind = route.state_kind.value
    planner = _planner(route.state_kind)
    empty = RegionSet.empty(vps.space)
    out: List[Violation] = []

    if not route.resolved:
        out.append(Violation("unresolved plan", None, f"{kind} plan has no resolved peers"))

    sends = {(t.src_device, t.dst_device, t.layout_key()) for rp in route.ranks.values() for t in rp.send}
    recvs = {(t.src_device, t.dst_device, t.layout_key()) for rp in route.ranks.values() for t in rp.recv}

    for device, rp in sorted(route.ranks.items()):
        send, recv, retain = rp.send_region, rp.recv_region, rp.retain
        for name, a, b in (("send/recv", send, recv), ("send/retain", send, retain), ("recv/retain", recv, retain)):
            if not (a & b).is_empty:
                out.append(Violation("overlapping categories", device, f"{kind} {name}: {(a & b).describe()}"))
        if (send | recv | retain) != (rp.src_region | rp.dst_region):
            out.append(Violation("decomposition mismatch", device, f"{kind} categories do not union to R_src ∪ R_dst"))

        expected_dst = planner.regions(vps, dst_cfg, rp.dst_rank) if rp.dst_rank is not None else empty
        received = empty
        for t in rp.recv:
            if t.src_device == t.dst_device:
                out.append(Violation("self transfer", device, t.line()))
            if not (received & t.region).is_empty:
                out.append(Violation("multiple sources", device, f"{kind} {(received & t.region).describe()}"))
            received = received | t.region
            if (t.src_device, t.dst_device, t.layout_key()) not in sends:
                out.append(Violation("unmatched recv", device, t.line()))
        missing = expected_dst - (retain | received)
        if not missing.is_empty:
            out.append(Violation("uncovered destination region", device, f"{kind} {missing.describe()}"))
        extra = received - rp.recv_region
        if not extra.is_empty:
            out.append(Violation("unexpected recv", device, f"{kind} {extra.describe()}"))

        for t in rp.send:
            if not (t.region - send).is_empty:
                out.append(Violation("send outside src-only region", device, t.line()))
            if (t.src_device, t.dst_device, t.layout_key()) not in recvs:
                out.append(Violation("unmatched send", device, t.line()))

    sent_bytes = sum(t.bytes for rp in route.ranks.values() for t in rp.send)
    recv_bytes = sum(t.bytes for rp in route.ranks.values() for t in rp.recv)
    if sent_bytes != recv_bytes:
        out.append(Violation("conservation", None, f"{kind} sends {sent_bytes} bytes, receives {recv_bytes}"))
    return out


def dump_plan(plan) -> str:
    """One line per transfer; empty string for a plan that moves nothing."""
    transfers = plan.transfers()
    return "".join(t.line() + "\n" for t in transfers)


def plan_transition(
    vps: Vps,
    src_cfg: ParallelConfig,
    dst_cfg: ParallelConfig,
    topology: Topology,
    world_map: Optional[WorldMap] = None,
    policy="bf16-fp32-mixed",
    gradients: str = "drop",
    batch: Optional[BatchConfig] = None,
    balance: bool = False,
) -> TransitionPlan:
    if world_map is None:
        world_map = WorldMap.build(src_cfg.world_size, dst_cfg.world_size)
    policy = get_policy(policy)

    routes = []
    for planner in ALL_PLANNERS:
        if not planner.is_enabled(gradients):
            continue
        routes.append(resolve_peers(planner.plan(vps, src_cfg, dst_cfg, world_map, policy), topology, balance))

    dropped: Dict[int, Dict[StateKind, RegionSet]] = {}
    if gradients == "drop":
        for src_rank, device in enumerate(world_map.src_devices):
            dropped[device] = {StateKind.GRADIENT: project(vps, src_cfg, src_rank)}

    plan = TransitionPlan(
        vps=vps, src_cfg=src_cfg, dst_cfg=dst_cfg, world_map=world_map, policy=policy, gradients=gradients,
        routes=tuple(routes), scalars=plan_scalars(src_cfg, dst_cfg, world_map),
        dataset=plan_dataset(src_cfg, dst_cfg, batch.consumed_samples, batch) if batch else None,
        dropped=dropped,
    )
    logger.info(
        "Planned %s -> %s: %d transfers, %d bytes moved, %d bytes retained",
        src_cfg.label(), dst_cfg.label(), len(plan.transfers()), plan.bytes_moved, plan.bytes_retained,
    )
    return plan


def plan_scenario(scenario: Scenario, vps: Optional[Vps] = None, gradients: Optional[str] = None) -> TransitionPlan:
    vps = vps or build_vps(scenario.model)
    world_map = WorldMap.build(scenario.src.world_size, scenario.dst.world_size, scenario.world_map)
    return plan_transition(
        vps, scenario.src, scenario.dst, scenario.topology, world_map,
        policy=scenario.precision, gradients=gradients or scenario.gradients, batch=scenario.batch,
    )
