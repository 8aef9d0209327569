"""
Elastic device manager: communicator groups and scale-event accounting.

Group lifecycle:
  derive_groups(cfg)           pure derivation of every group dimension
  GroupCache.get_or_create     cached GroupSets; a miss charges a creation
                               cost per group, a hit is free

Scale events (simulate_scale_event):
  in-place    same world, only groups and state move; no world init
  blocking    training stops, the new world initializes, then the switch
  overlapped  the new world initializes in the background while whole
              training steps continue; the switch happens at a step boundary
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError
from .models import ParallelConfig, WorldTransition

logger = logging.getLogger(__name__)

SCALE_MODES = ("in-place", "blocking", "overlapped")
GROUP_DIMENSIONS = ("dp", "tp", "pp", "ep", "edp", "mp", "dp-opt")

DEFAULT_INIT_COSTS: Dict[int, float] = {1: 6.0, 2: 15.0, 4: 29.5, 8: 45.0, 16: 62.0}
GROUP_CREATE_COST = float(os.getenv("RESHARD_GROUP_CREATE_COST", "0.05"))


def parse_cost_table(text: str) -> Dict[int, float]:
    """Parse "nodes:seconds,..." into a table."""
    table = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        try:
            nodes, seconds = item.split(":")
            table[int(nodes)] = float(seconds)
        except ValueError:
            raise ConfigError(f"bad init-cost entry {item!r}; expected nodes:seconds") from None
    if not table:
        raise ConfigError("init-cost table is empty")
    return dict(sorted(table.items()))


def init_cost_table() -> Dict[int, float]:
    override = os.getenv("RESHARD_INIT_COST_TABLE")
    return parse_cost_table(override) if override else dict(DEFAULT_INIT_COSTS)


def lookup_init_cost(node_count: int, table: Optional[Dict[int, float]] = None) -> float:
    """Linear interpolation, extrapolated from the two nearest points outside the table."""
    table = table or init_cost_table()
    xs = sorted(table)
    if node_count in table:
        return table[node_count]
    if len(xs) == 1:
        return table[xs[0]]
    if node_count < xs[0]:
        lo, hi = xs[0], xs[1]
    elif node_count > xs[-1]:
        lo, hi = xs[-2], xs[-1]
    else:
        hi = next(x for x in xs if x > node_count)
        lo = xs[xs.index(hi) - 1]
    slope = (table[hi] - table[lo]) / (hi - lo)
    return max(0.0, table[lo] + slope * (node_count - lo))


# ── Groups ────────────────────────────────────────────────────────────────────

def _prefix_product(values: List[int], init: int = 1) -> List[int]:
    out = [init]
    for v in values:
        init *= v
        out.append(init)
    return out


def _decompose(index: int, shape: List[int]) -> List[int]:
    stride = _prefix_product(shape)
    return [(index // d) % s for s, d in zip(shape, stride)]


def masked_rank_groups(world_size: int, sizes: List[int], mask: List[bool]) -> List[List[int]]:
    """Groups spanning the masked axes; `sizes` is ordered fastest-varying first."""
    masked = [s for s, m in zip(sizes, mask) if m]
    unmasked = [s for s, m in zip(sizes, mask) if not m]
    stride = _prefix_product(sizes)
    masked_stride = [d for d, m in zip(stride, mask) if m]
    unmasked_stride = [d for d, m in zip(stride, mask) if not m]

    group_size = _prefix_product(masked)[-1]
    groups = []
    for group_index in range(world_size // group_size):
        base = sum(i * d for i, d in zip(_decompose(group_index, unmasked), unmasked_stride))
        groups.append([
            base + sum(i * d for i, d in zip(_decompose(rank, masked), masked_stride))
            for rank in range(group_size)
        ])
    return groups


def _axes(cfg: ParallelConfig) -> Tuple[List[str], List[int]]:
    """Fastest-first axes, with dp split into ep (fast) and edp."""
    sizes = {"tp": cfg.tp, "pp": cfg.pp, "ep": cfg.ep, "edp": cfg.edp}
    names: List[str] = []
    for axis in reversed(cfg.order):
        names.extend(("ep", "edp") if axis == "dp" else (axis,))
    return names, [sizes[n] for n in names]


@dataclass(frozen=True)
class GroupSet:
    cfg: ParallelConfig
    groups: Dict[str, Tuple[Tuple[int, ...], ...]] = field(compare=False)

    @property
    def count(self) -> int:
        return sum(len(g) for g in self.groups.values())

    def group_of(self, dimension: str, rank: int) -> Tuple[int, ...]:
        for group in self.groups[dimension]:
            if rank in group:
                return group
        raise ConfigError(f"rank {rank} has no {dimension} group")


def derive_groups(cfg: ParallelConfig) -> GroupSet:
    names, sizes = _axes(cfg)
    world = cfg.world_size

    def span(*axes: str) -> Tuple[Tuple[int, ...], ...]:
        mask = [n in axes for n in names]
        return tuple(tuple(g) for g in masked_rank_groups(world, sizes, mask))

    groups = {
        "dp": span("ep", "edp"),
        "tp": span("tp"),
        "pp": span("pp"),
        "ep": span("ep"),
        "edp": span("edp"),
        "mp": span("tp", "pp"),
        "dp-opt": span("ep", "edp") if cfg.zero_enabled else (),
    }
    return GroupSet(cfg=cfg, groups=groups)


class GroupCache:
    def __init__(self, group_create_cost: float = GROUP_CREATE_COST):
        self.group_create_cost = group_create_cost
        self.hits = 0
        self.misses = 0
        self.total_cost = 0.0
        self._cache: Dict[ParallelConfig, GroupSet] = {}

    def __contains__(self, cfg: ParallelConfig) -> bool:
        return cfg in self._cache

    def get_or_create(self, cfg: ParallelConfig) -> Tuple[GroupSet, float]:
        """Returns the GroupSet and the simulated seconds spent creating it."""
        if cfg in self._cache:
            self.hits += 1
            return self._cache[cfg], 0.0
        groups = derive_groups(cfg)
        cost = groups.count * self.group_create_cost
        self._cache[cfg] = groups
        self.misses += 1
        self.total_cost += cost
        logger.debug("Created %d groups for %s in %.3fs", groups.count, cfg.label(), cost)
        return groups, cost


def get_or_create_groups(cache: GroupCache, cfg: ParallelConfig) -> GroupSet:
    return cache.get_or_create(cfg)[0]


# ── Scale events ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Phase:
    name: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class ScaleTimeline:
    mode: str
    init_cost: float
    train_step_cost: float
    switch_cost: float
    overlapped_steps: int
    overlapped: float
    exposed: float
    state_as_of_step: int
    group_cost: float = 0.0
    phases: List[Phase] = field(default_factory=list)

    @property
    def overlap_ratio(self) -> Optional[float]:
        """None when there is no init to hide."""
        if self.init_cost == 0 or self.overlapped + self.exposed == 0:
            return None
        return self.overlapped / (self.overlapped + self.exposed)

    @property
    def total(self) -> float:
        return max((p.end for p in self.phases), default=0.0)


def resolve_init_cost(transition: WorldTransition, table: Optional[Dict[int, float]] = None) -> float:
    if transition.init_cost is not None:
        return transition.init_cost
    nodes = transition.node_count or len(transition.new_nodes)
    if not nodes:
        raise ConfigError("init_cost, node_count or new_nodes is required", ("transition",))
    return lookup_init_cost(nodes, table)


def simulate_scale_event(
    transition: WorldTransition,
    mode: str,
    current_step: int = 0,
    table: Optional[Dict[int, float]] = None,
    group_cost: float = 0.0,
) -> ScaleTimeline:
    """Account one scale event. `group_cost` is added to the switch in in-place mode."""
    if mode not in SCALE_MODES:
        raise ConfigError(f"unknown scale mode {mode!r}; expected one of {', '.join(SCALE_MODES)}", ("mode",))
    step = transition.train_step_cost
    switch = transition.switch_cost

    if mode == "in-place":
        if transition.old_nodes != transition.new_nodes:
            logger.warning("In-place reconfiguration requested but node lists differ")
        switch += group_cost
        return ScaleTimeline(
            mode=mode, init_cost=0.0, train_step_cost=step, switch_cost=switch,
            overlapped_steps=0, overlapped=0.0, exposed=switch, state_as_of_step=current_step,
            group_cost=group_cost, phases=[Phase("switch", 0.0, switch)],
        )

    init = resolve_init_cost(transition, table)
    if mode == "blocking":
        phases = [Phase("init", 0.0, init), Phase("switch", init, init + switch)]
        return ScaleTimeline(
            mode=mode, init_cost=init, train_step_cost=step, switch_cost=switch,
            overlapped_steps=0, overlapped=0.0, exposed=init + switch, state_as_of_step=current_step,
            phases=phases,
        )

    n = math.floor(init / step + 1e-9)
    if transition.window_steps is not None:
        n = min(n, transition.window_steps)
    overlapped = n * step
    remainder = max(0.0, init - overlapped)
    phases = [Phase("init-background", 0.0, init)]
    if n:
        phases.insert(0, Phase(f"train x{n}", 0.0, overlapped))
    switch_start = max(init, overlapped)
    phases.append(Phase("switch", switch_start, switch_start + switch))
    timeline = ScaleTimeline(
        mode=mode, init_cost=init, train_step_cost=step, switch_cost=switch,
        overlapped_steps=n, overlapped=overlapped, exposed=switch + remainder,
        state_as_of_step=current_step + n, phases=phases,
    )
    logger.info("Scale event (%s): exposed %.2fs, overlapped %.2fs", mode, timeline.exposed, timeline.overlapped)
    return timeline
