"""
Transition engine: turns a resolved TransitionPlan into a TransitionSchedule.

build_schedule sequence:
  1. optimize_primitives: group transfers by (state kind, tensor) and promote
     1→many identical slices to Broadcast, 1→many contiguous slices to Scatter,
     many→1 contiguous slices to Gather; everything else stays p2p
  2. Free-list: dropped gradients plus src-only state no receiver selected
  3. XOR steps: pair (i, j) exchanges at step i ⊕ j; cost(s) is the max over
     devices of send + recv bytes in that step; zero-traffic steps are elided
  4. memory_aware_chunk: greedy packing of steps under min(mem_avail)
  5. Per (step, sender, receiver) buffer layouts ordered by
     (tensor_id, region, kind), so both peers pack identically
  6. Release schedule: each src-only region is freed after the phase of its
     last use as a source

Collectives run in their own phase before the first stage, one at a time.
"""

import logging
import random
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import ConfigError, InfeasibleBudgetError, PlanError, Violation
from .models import Topology
from .planners import SliceTransfer, StateKind
from .regions import RegionSet, union_all
from .routing import TransitionPlan
from .vps import Vps

logger = logging.getLogger(__name__)

INFEASIBLE = "infeasible budget: finer fragmentation required"


class CommKind(str, Enum):
    P2P_SEND = "p2p-send"
    P2P_RECV = "p2p-recv"
    BROADCAST = "broadcast"
    SCATTER = "scatter"
    GATHER = "gather"


@dataclass(frozen=True)
class CommOp:
    kind: CommKind
    root: int
    participants: Tuple[int, ...]
    payload: Tuple[SliceTransfer, ...]
    bytes: int
    tensor_id: str
    peer: Optional[int] = None
    est_time: float = 0.0

    def rank_bytes(self, device: int) -> int:
        """Transient buffer bytes this op needs on `device`."""
        if device not in self.participants:
            return 0
        if self.kind == CommKind.BROADCAST:
            return self.payload[0].bytes
        if device == self.root:
            return self.bytes
        return sum(t.bytes for t in self.payload if device in (t.src_device, t.dst_device))

    def decompose(self) -> Tuple[SliceTransfer, ...]:
        return self.payload

    def line(self) -> str:
        return (
            f"collective {self.kind.value} {self.tensor_id} root={self.root} "
            f"participants={','.join(map(str, self.participants))} bytes={self.bytes}"
        )


@dataclass(frozen=True)
class BufferSlot:
    transfer: SliceTransfer
    offset: int        # elements
    byte_offset: int


@dataclass(frozen=True)
class BufferLayout:
    step: int
    src_device: int
    dst_device: int
    slots: Tuple[BufferSlot, ...]
    numel: int
    nbytes: int
    zero_copy: bool

    def signature(self) -> Tuple:
        return tuple((s.transfer.layout_key(), s.offset, s.byte_offset) for s in self.slots)


@dataclass(frozen=True)
class Stage:
    index: int
    steps: Tuple[int, ...]
    mem_cost: int
    transfers: Tuple[SliceTransfer, ...] = ()
    layouts: Tuple[BufferLayout, ...] = ()

    def layout(self, step: int, src: int, dst: int) -> Optional[BufferLayout]:
        for layout in self.layouts:
            if (layout.step, layout.src_device, layout.dst_device) == (step, src, dst):
                return layout
        return None

    def has_traffic(self, step: int, a: int, b: int) -> bool:
        return self.layout(step, a, b) is not None or self.layout(step, b, a) is not None

    def rank_bytes(self, device: int) -> int:
        return sum(l.nbytes for l in self.layouts if device in (l.src_device, l.dst_device))


@dataclass
class TransitionSchedule:
    vps: Vps
    num_devices: int
    budget: int
    collectives: Tuple[CommOp, ...]
    stages: Tuple[Stage, ...]
    free_list: Dict[int, Dict[StateKind, RegionSet]]
    releases: Tuple[Dict[int, Dict[StateKind, RegionSet]], ...]
    departing: Tuple[int, ...] = ()
    dst_devices: Tuple[int, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.collectives and not self.stages


@dataclass
class _Unit:
    step: int
    transfers: Tuple[SliceTransfer, ...]
    cost: int


def xor_peer(rank: int, step: int) -> int:
    return rank ^ step


def step_range(n: int) -> range:
    """1 … 2^ceil(log2 n) − 1, so every pair (i, j) with i, j < n has a step."""
    return range(1, 1 << max(n - 1, 0).bit_length())


def xor_schedule(stage: Stage, n: int, rank: int) -> List[Tuple[int, int]]:
    """(step, peer) pairs `rank` is active in during `stage`, in step order."""
    out = []
    for step in stage.steps:
        peer = xor_peer(rank, step)
        if peer < n and stage.has_traffic(step, rank, peer):
            out.append((step, peer))
    return out


def _contiguous(group: Sequence[SliceTransfer]) -> bool:
    union = union_all(group[0].region.space, [t.region for t in group])
    single = (len(union.boxes) == 1 and len(union.boxes[0][1]) == 1 and not union.flat) or (
        not union.boxes and len(union.flat) == 1
    )
    return single and union.numel == sum(t.numel for t in group)


def optimize_primitives(
    plan: TransitionPlan, topo: Optional[Topology] = None
) -> Tuple[List[CommOp], List[SliceTransfer]]:
    """Promote transfer groups to collectives; returns (collectives, residual p2p)."""
    transfers = plan.transfers()
    received: Dict[Tuple[int, StateKind], RegionSet] = {}
    for t in transfers:
        key = (t.dst_device, t.state_kind)
        held = received.get(key, RegionSet.empty(t.region.space))
        if not (held & t.region).is_empty:
            raise PlanError(f"duplicate source for {t.tensor_id} on device {t.dst_device}")
        received[key] = held | t.region

    groups: Dict[Tuple[str, str], List[SliceTransfer]] = defaultdict(list)
    for t in transfers:
        groups[(t.state_kind.value, t.tensor_id)].append(t)

    collectives, residual = [], []
    for key in sorted(groups):
        group = groups[key]
        srcs = sorted({t.src_device for t in group})
        dsts = sorted({t.dst_device for t in group})
        kind = None
        if len(srcs) == 1 and len(dsts) > 1 and len(group) == len(dsts):
            if all(t.region == group[0].region for t in group):
                kind = CommKind.BROADCAST
            elif _contiguous(group):
                kind = CommKind.SCATTER
        elif len(srcs) > 1 and len(dsts) == 1 and len(group) == len(srcs) and _contiguous(group):
            kind = CommKind.GATHER
        if kind is None:
            residual.extend(group)
            continue
        root = srcs[0] if kind != CommKind.GATHER else dsts[0]
        collectives.append(_collective(kind, root, group, topo))

    logger.debug("Promoted %d collectives, %d p2p transfers remain", len(collectives), len(residual))
    return collectives, sorted(residual, key=SliceTransfer.sort_key)


def _collective(kind: CommKind, root: int, payload: Sequence[SliceTransfer], topo: Optional[Topology]) -> CommOp:
    participants = tuple(sorted({root} | {t.src_device for t in payload} | {t.dst_device for t in payload}))
    nbytes = payload[0].bytes if kind == CommKind.BROADCAST else sum(t.bytes for t in payload)
    est = topo.collective_time(kind.value, root, participants, nbytes) if topo else 0.0
    return CommOp(
        kind=kind, root=root, participants=participants, payload=tuple(payload), bytes=nbytes,
        tensor_id=payload[0].tensor_id, est_time=est,
    )


def step_costs(transfers: Iterable[SliceTransfer]) -> Dict[int, int]:
    per_step: Dict[int, Dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for t in transfers:
        step = xor_peer(t.src_device, t.dst_device)
        per_step[step][t.src_device] += t.bytes
        per_step[step][t.dst_device] += t.bytes
    return {s: max(per_device.values()) for s, per_device in sorted(per_step.items())}


def _chunk(units: Sequence[_Unit], budget: int) -> List[List[_Unit]]:
    groups: List[List[_Unit]] = []
    current: List[_Unit] = []
    total = 0
    for unit in units:
        if unit.cost == 0:
            continue
        if unit.cost > budget:
            raise InfeasibleBudgetError(f"{INFEASIBLE} (step {unit.step} needs {unit.cost} bytes, budget {budget})")
        if current and total + unit.cost > budget:
            groups.append(current)
            current, total = [], 0
        current.append(unit)
        total += unit.cost
    if current:
        groups.append(current)
    return groups


def memory_aware_chunk(costs: Mapping[int, int], mem_avail: Sequence[int]) -> List[Stage]:
    """Greedy stage packing of steps (ascending) under the global minimum budget."""
    if not mem_avail:
        raise ConfigError("mem_avail must list at least one rank")
    budget = min(mem_avail)
    units = [_Unit(step, (), cost) for step, cost in sorted(costs.items())]
    return [
        Stage(index=i, steps=tuple(u.step for u in group), mem_cost=sum(u.cost for u in group))
        for i, group in enumerate(_chunk(units, budget), start=1)
    ]


def _split_step(step: int, transfers: Sequence[SliceTransfer], budget: int) -> List[_Unit]:
    """Experimental: cut an oversized step into sub-steps of whole fragments."""
    units, current = [], []
    load: Dict[int, int] = defaultdict(int)
    for t in transfers:
        if t.bytes > budget:
            raise InfeasibleBudgetError(f"{INFEASIBLE} (fragment {t.tensor_id} needs {t.bytes} bytes)")
        if current and max(load[t.src_device], load[t.dst_device]) + t.bytes > budget:
            units.append(_Unit(step, tuple(current), max(load.values())))
            current, load = [], defaultdict(int)
        current.append(t)
        load[t.src_device] += t.bytes
        load[t.dst_device] += t.bytes
    if current:
        units.append(_Unit(step, tuple(current), max(load.values())))
    return units


def _units(residual: Sequence[SliceTransfer], budget: int, split_oversized: bool) -> List[_Unit]:
    by_step: Dict[int, List[SliceTransfer]] = defaultdict(list)
    for t in residual:
        by_step[xor_peer(t.src_device, t.dst_device)].append(t)
    units = []
    for step in sorted(by_step):
        transfers = by_step[step]
        cost = step_costs(transfers)[step]
        if cost > budget and split_oversized:
            units.extend(_split_step(step, transfers, budget))
        else:
            units.append(_Unit(step, tuple(transfers), cost))
    return units


def is_contiguous(vps: Vps, region: RegionSet) -> bool:
    if not region.boxes:
        return len(region.flat) <= 1
    return len(vps.to_flat(region).flat) <= 1


def build_layout(vps: Vps, step: int, src: int, dst: int, transfers: Iterable[SliceTransfer]) -> BufferLayout:
    ordered = sorted(transfers, key=SliceTransfer.layout_key)
    slots, offset, byte_offset = [], 0, 0
    for t in ordered:
        slots.append(BufferSlot(t, offset, byte_offset))
        offset += t.numel
        byte_offset += t.bytes
    zero_copy = len(ordered) == 1 and is_contiguous(vps, ordered[0].region)
    return BufferLayout(step, src, dst, tuple(slots), offset, byte_offset, zero_copy)


def _stage_layouts(vps: Vps, transfers: Sequence[SliceTransfer]) -> Tuple[BufferLayout, ...]:
    pairs: Dict[Tuple[int, int, int], List[SliceTransfer]] = defaultdict(list)
    for t in transfers:
        pairs[(xor_peer(t.src_device, t.dst_device), t.src_device, t.dst_device)].append(t)
    return tuple(build_layout(vps, step, src, dst, pairs[(step, src, dst)]) for step, src, dst in sorted(pairs))


def _free_list(plan: TransitionPlan) -> Dict[int, Dict[StateKind, RegionSet]]:
    free: Dict[int, Dict[StateKind, RegionSet]] = {}
    for device, kinds in plan.dropped.items():
        for kind, region in kinds.items():
            if not region.is_empty:
                free.setdefault(device, {})[kind] = region
    for route in plan.routes:
        for device, rp in route.ranks.items():
            obsolete = rp.obsolete_region()
            if not obsolete.is_empty:
                free.setdefault(device, {})[route.state_kind] = obsolete
    return free


def _releases(
    plan: TransitionPlan, collectives: Sequence[CommOp], stages: Sequence[Stage]
) -> Tuple[Dict[int, Dict[StateKind, RegionSet]], ...]:
    phases: List[List[SliceTransfer]] = [[t for op in collectives for t in op.payload]]
    phases += [list(stage.transfers) for stage in stages]
    space = plan.vps.space
    releases: List[Dict[int, Dict[StateKind, RegionSet]]] = [{} for _ in phases]
    later: Dict[Tuple[int, StateKind], RegionSet] = {}
    for index in reversed(range(len(phases))):
        sent: Dict[Tuple[int, StateKind], RegionSet] = {}
        for t in phases[index]:
            if t.state_kind == StateKind.SCALAR:
                continue
            key = (t.src_device, t.state_kind)
            sent[key] = sent.get(key, RegionSet.empty(space)) | t.region
        for (device, kind), region in sorted(sent.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            last_use = region - later.get((device, kind), RegionSet.empty(space))
            route = plan.route(kind)
            if route is not None and device in route.ranks:
                last_use = last_use & route.ranks[device].send_region
            if not last_use.is_empty:
                releases[index].setdefault(device, {})[kind] = last_use
            later[(device, kind)] = later.get((device, kind), RegionSet.empty(space)) | region
    return tuple(releases)


def _scalar_op(plan: TransitionPlan, topo: Optional[Topology]) -> Optional[CommOp]:
    if plan.scalars.is_noop:
        return None
    return _collective(CommKind.BROADCAST, plan.scalars.root_device, plan.scalar_transfers(), topo)


def build_schedule(
    plan: TransitionPlan,
    topo: Optional[Topology],
    mem_avail: Sequence[int],
    n: Optional[int] = None,
    split_oversized: bool = False,
) -> TransitionSchedule:
    n = plan.num_devices if n is None else n
    if n != plan.num_devices:
        raise ConfigError(f"schedule size {n} does not match the plan's {plan.num_devices} devices")
    if not mem_avail:
        raise ConfigError("mem_avail must list at least one rank")
    budget = min(mem_avail)

    collectives, residual = optimize_primitives(plan, topo)
    scalar_op = _scalar_op(plan, topo)
    if scalar_op is not None:
        collectives.insert(0, scalar_op)
    for op in collectives:
        need = max(op.rank_bytes(d) for d in op.participants)
        if need > budget:
            raise InfeasibleBudgetError(f"{INFEASIBLE} ({op.kind.value} of {op.tensor_id} needs {need} bytes)")

    stages = []
    for index, group in enumerate(_chunk(_units(residual, budget, split_oversized), budget), start=1):
        transfers = tuple(sorted((t for u in group for t in u.transfers), key=SliceTransfer.sort_key))
        stages.append(Stage(
            index=index,
            steps=tuple(sorted({u.step for u in group})),
            mem_cost=sum(u.cost for u in group),
            transfers=transfers,
            layouts=_stage_layouts(plan.vps, transfers),
        ))

    valid_steps = step_range(n)
    for stage in stages:
        if any(s not in valid_steps for s in stage.steps):
            raise PlanError(f"stage {stage.index} uses steps outside 1..{valid_steps.stop - 1}")

    schedule = TransitionSchedule(
        vps=plan.vps,
        num_devices=n,
        budget=budget,
        collectives=tuple(collectives),
        stages=tuple(stages),
        free_list=_free_list(plan),
        releases=_releases(plan, collectives, stages),
        departing=plan.world_map.departing,
        dst_devices=tuple(sorted(plan.world_map.dst_devices)),
    )
    logger.info(
        "Scheduled %d collectives and %d stages under a %d-byte budget",
        len(schedule.collectives), len(schedule.stages), budget,
    )
    return schedule


def flatten_schedule(schedule: TransitionSchedule) -> List[SliceTransfer]:
    """Every transfer the schedule carries, collectives decomposed."""
    out = [t for op in schedule.collectives for t in op.decompose()]
    out += [slot.transfer for stage in schedule.stages for layout in stage.layouts for slot in layout.slots]
    return sorted(out, key=SliceTransfer.sort_key)


def drop_transfer(schedule: TransitionSchedule, rng: random.Random) -> Tuple[TransitionSchedule, SliceTransfer]:
    """Fault injection: a copy of the schedule with one staged transfer removed."""
    candidates = [(i, t) for i, stage in enumerate(schedule.stages) for t in stage.transfers]
    if not candidates:
        raise PlanError("schedule has no staged transfer to drop")
    index, victim = rng.choice(candidates)
    stage = schedule.stages[index]
    kept = tuple(t for t in stage.transfers if t != victim)
    stages = list(schedule.stages)
    stages[index] = replace(stage, transfers=kept, layouts=_stage_layouts(schedule.vps, kept))
    logger.debug("Dropped %s from stage %d", victim.line(), stage.index)
    return replace(schedule, stages=tuple(stages)), victim


def check_layouts(schedule: TransitionSchedule, plan: TransitionPlan) -> List[Violation]:
    """Sender- and receiver-side layouts, derived independently, must agree."""
    out: List[Violation] = []
    expected = sorted(plan.transfers() + plan.scalar_transfers(), key=SliceTransfer.sort_key)
    if flatten_schedule(schedule) != expected:
        out.append(Violation("incomplete schedule", None, "flattened schedule differs from the plan"))

    received: Dict[int, List[SliceTransfer]] = defaultdict(list)
    for route in plan.routes:
        for device, rp in route.ranks.items():
            received[device].extend(rp.recv)

    for stage in schedule.stages:
        in_stage = set(stage.transfers)
        for device in range(schedule.num_devices):
            outbound = [t for t in stage.transfers if t.src_device == device]
            inbound = [t for t in stage.transfers if t.dst_device == device]
            for step, peer in xor_schedule(stage, schedule.num_devices, device):
                mine = build_layout(schedule.vps, step, device, peer, [t for t in outbound if t.dst_device == peer])
                theirs = build_layout(schedule.vps, step, device, peer,
                                      [t for t in received[peer] if t.src_device == device and t in in_stage])
                stored = stage.layout(step, device, peer)
                if stored is None:
                    if mine.slots:
                        out.append(Violation("missing layout", device, f"stage {stage.index} step {step} to {peer}"))
                    continue
                if not (mine.signature() == theirs.signature() == stored.signature()):
                    out.append(Violation("layout disagreement", device, f"stage {stage.index} step {step} to {peer}"))
            for t in inbound:
                if xor_peer(t.src_device, t.dst_device) not in stage.steps:
                    out.append(Violation("transfer outside stage steps", device, t.line()))

        for step in stage.steps:
            partners: Dict[int, int] = {}
            for layout in stage.layouts:
                if layout.step != step:
                    continue
                for a, b in ((layout.src_device, layout.dst_device), (layout.dst_device, layout.src_device)):
                    if partners.setdefault(a, b) != b:
                        out.append(Violation("not a matching", a, f"stage {stage.index} step {step}"))
        if any(stage.rank_bytes(d) > schedule.budget for d in range(schedule.num_devices)):
            out.append(Violation("memory bound", None, f"stage {stage.index} exceeds budget {schedule.budget}"))
    return out


def dump_schedule(schedule: TransitionSchedule) -> str:
    lines = [
        f"schedule devices={schedule.num_devices} budget={schedule.budget} "
        f"collectives={len(schedule.collectives)} stages={len(schedule.stages)}"
    ]
    for device in sorted(schedule.free_list):
        for kind, region in sorted(schedule.free_list[device].items(), key=lambda kv: kv[0].value):
            lines.append(f"free device={device} {kind.value} {region.describe()}")
    for op in schedule.collectives:
        lines.append(op.line())
        lines.extend(f"  {t.line()}" for t in op.payload)
    for stage in schedule.stages:
        lines.append(f"stage {stage.index} steps={','.join(map(str, stage.steps))} mem={stage.mem_cost}")
        for layout in stage.layouts:
            lines.append(
                f"  step {layout.step} {layout.src_device}->{layout.dst_device} "
                f"bytes={layout.nbytes}{' zero-copy' if layout.zero_copy else ''}"
            )
            lines.extend(f"    {slot.transfer.line()} offset={slot.offset}" for slot in layout.slots)
    return "\n".join(lines) + "\n"
