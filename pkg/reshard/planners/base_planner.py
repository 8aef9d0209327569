"""
Base planner interface for region-valued training state.

Every state planner inherits from BasePlanner and implements:
  - regions(vps, cfg, rank): the RegionSet a rank holds under cfg
  - element_bytes(vps, tensor_id, policy): bytes moved per element of that tensor
  - is_enabled(gradients): True if the planner takes part in a transition

The shared decomposition lives here: per physical device,
  retain = R_src ∩ R_dst,  send = R_src \\ R_dst,  recv = R_dst \\ R_src,
with each recv fragment refined by the set of src ranks that hold it.

Registration: add planner instances to ALL_PLANNERS in reshard/planners/__init__.py
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from ..errors import ConfigError, PlanError
from ..models import ParallelConfig, PrecisionPolicy, WorldMapSpec
from ..regions import RegionSet, box_numel
from ..vps import Vps

logger = logging.getLogger(__name__)


class StateKind(str, Enum):
    PARAMETER = "parameter"
    OPTIMIZER = "optimizer"
    GRADIENT = "gradient"
    SCALAR = "scalar"


@dataclass(frozen=True)
class WorldMap:
    """Physical device of every src-world and dst-world rank."""

    src_devices: Tuple[int, ...]
    dst_devices: Tuple[int, ...]

    @classmethod
    def build(cls, src_size: int, dst_size: int, spec: Optional[WorldMapSpec] = None) -> "WorldMap":
        src = tuple(spec.src_devices) if spec and spec.src_devices is not None else tuple(range(src_size))
        dst = tuple(spec.dst_devices) if spec and spec.dst_devices is not None else tuple(range(dst_size))
        world_map = cls(src, dst)
        world_map.check(src_size, dst_size)
        return world_map

    @classmethod
    def identity(cls, size: int) -> "WorldMap":
        return cls(tuple(range(size)), tuple(range(size)))

    def check(self, src_size: int, dst_size: int) -> None:
        if len(self.src_devices) != src_size or len(self.dst_devices) != dst_size:
            raise ConfigError("world map sizes do not match the configurations", ("world_map",))
        for name, devices in (("src_devices", self.src_devices), ("dst_devices", self.dst_devices)):
            if len(set(devices)) != len(devices) or min(devices, default=0) < 0:
                raise ConfigError(f"world_map.{name} must list distinct non-negative devices", ("world_map", name))
        if set(self.src_devices) | set(self.dst_devices) != set(range(self.num_devices)):
            raise ConfigError("world map leaves gaps in the device range", ("world_map",))

    @property
    def num_devices(self) -> int:
        return max(self.src_devices + self.dst_devices) + 1

    def src_rank_of(self, device: int) -> Optional[int]:
        return self._src_index.get(device)

    def dst_rank_of(self, device: int) -> Optional[int]:
        return self._dst_index.get(device)

    @property
    def _src_index(self) -> Dict[int, int]:
        return {d: r for r, d in enumerate(self.src_devices)}

    @property
    def _dst_index(self) -> Dict[int, int]:
        return {d: r for r, d in enumerate(self.dst_devices)}

    @property
    def departing(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.src_devices) - set(self.dst_devices)))

    @property
    def joining(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.dst_devices) - set(self.src_devices)))

    @property
    def is_identity(self) -> bool:
        return self.src_devices == self.dst_devices


@dataclass(frozen=True)
class SliceTransfer:
    """One point-to-point move of a single-tensor fragment."""

    state_kind: StateKind
    tensor_id: str
    region: RegionSet
    src_rank: int       # src-world rank
    dst_rank: int       # dst-world rank
    src_device: int
    dst_device: int
    numel: int
    bytes: int

    def sort_key(self) -> Tuple:
        return (self.src_rank, self.dst_rank, self.tensor_id, self.state_kind.value, self.region.sort_key())

    def layout_key(self) -> Tuple:
        return (self.tensor_id, self.region.sort_key(), self.state_kind.value)

    def line(self) -> str:
        return (
            f"{self.state_kind.value} {self.tensor_id} {self.region.render()} "
            f"src={self.src_rank} dst={self.dst_rank} bytes={self.bytes}"
        )


@dataclass(frozen=True)
class PendingFragment:
    """A recv fragment whose every element is held by exactly `candidates` (src ranks)."""

    region: RegionSet
    dst_rank: int
    dst_device: int
    candidates: Tuple[int, ...]


@dataclass
class RankPlan:
    device: int
    src_rank: Optional[int]
    dst_rank: Optional[int]
    src_region: RegionSet
    dst_region: RegionSet
    retain: RegionSet
    send_region: RegionSet       # raw R_src \ R_dst, before pruning
    recv_region: RegionSet
    pending: List[PendingFragment] = field(default_factory=list)
    send: List[SliceTransfer] = field(default_factory=list)
    recv: List[SliceTransfer] = field(default_factory=list)

    def sent_region(self) -> RegionSet:
        out = RegionSet.empty(self.src_region.space)
        for t in self.send:
            out = out | t.region
        return out

    def obsolete_region(self) -> RegionSet:
        """Src-only state nobody selected as a source."""
        return self.send_region - self.sent_region()


@dataclass
class RoutingPlan:
    state_kind: StateKind
    vps: Vps
    world_map: WorldMap
    element_bytes: Mapping[str, int]
    ranks: Dict[int, RankPlan]
    resolved: bool = False

    def transfers(self) -> List[SliceTransfer]:
        return sorted((t for rp in self.ranks.values() for t in rp.send), key=SliceTransfer.sort_key)

    def bytes_of(self, region: RegionSet) -> int:
        total = 0
        for tid, boxes in region.boxes:
            total += sum(box_numel(b) for b in boxes) * self.element_bytes[tid]
        for tid, (lo, hi) in self.vps.split_flat(region.flat):
            total += (hi - lo) * self.element_bytes[tid]
        return total

    @property
    def bytes_moved(self) -> int:
        return sum(t.bytes for t in self.transfers())

    @property
    def bytes_retained(self) -> int:
        return sum(self.bytes_of(rp.retain) for rp in self.ranks.values())


class BasePlanner(ABC):
    name: str           # e.g. "parameter", matches the StateKind value
    display_name: str   # e.g. "Parameters", shown in reports
    state_kind: StateKind

    @abstractmethod
    def regions(self, vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
        """Return the state a rank holds under cfg."""

    @abstractmethod
    def element_bytes(self, vps: Vps, tensor_id: str, policy: PrecisionPolicy) -> int:
        """Bytes moved per element of tensor_id."""

    @abstractmethod
    def is_enabled(self, gradients: str) -> bool:
        """Return True if this planner takes part under the given gradient mode."""

    def check(self, src_cfg: ParallelConfig, dst_cfg: ParallelConfig) -> None:
        """Reject transitions this planner cannot route."""

    def plan(
        self,
        vps: Vps,
        src_cfg: ParallelConfig,
        dst_cfg: ParallelConfig,
        world_map: WorldMap,
        policy: PrecisionPolicy,
    ) -> RoutingPlan:
        """Unresolved plan: decomposition plus candidate sources per recv fragment."""
        self.check(src_cfg, dst_cfg)
        src_regions = {r: self.regions(vps, src_cfg, r) for r in range(src_cfg.world_size)}
        dst_regions = {r: self.regions(vps, dst_cfg, r) for r in range(dst_cfg.world_size)}
        empty = RegionSet.empty(vps.space)

        ranks = {}
        for device in range(world_map.num_devices):
            s = world_map.src_rank_of(device)
            d = world_map.dst_rank_of(device)
            r_src = src_regions[s] if s is not None else empty
            r_dst = dst_regions[d] if d is not None else empty
            recv_region = r_dst - r_src
            pending = []
            if d is not None and not recv_region.is_empty:
                pending = _candidates(recv_region, src_regions, d, device)
            ranks[device] = RankPlan(
                device=device, src_rank=s, dst_rank=d,
                src_region=r_src, dst_region=r_dst,
                retain=r_src & r_dst, send_region=r_src - r_dst, recv_region=recv_region,
                pending=pending,
            )
        element_bytes = {t.tensor_id: self.element_bytes(vps, t.tensor_id, policy) for t in vps.layouts}
        plan = RoutingPlan(self.state_kind, vps, world_map, element_bytes, ranks)
        logger.debug(
            "%s plan: %d devices, %d pending fragments",
            self.name, len(ranks), sum(len(rp.pending) for rp in ranks.values()),
        )
        return plan


def _candidates(
    recv_region: RegionSet,
    src_regions: Mapping[int, RegionSet],
    dst_rank: int,
    device: int,
) -> List[PendingFragment]:
    pieces: List[Tuple[RegionSet, Tuple[int, ...]]] = [(recv_region, ())]
    for src_rank in sorted(src_regions):
        held = src_regions[src_rank]
        refined = []
        for piece, cands in pieces:
            inside = piece & held
            if not inside.is_empty:
                refined.append((inside, cands + (src_rank,)))
            outside = piece - held
            if not outside.is_empty:
                refined.append((outside, cands))
        pieces = refined
    fragments = []
    for piece, cands in pieces:
        if not cands:
            raise PlanError(f"unreachable state: dst rank {dst_rank} needs {piece.describe()} held by no source")
        fragments.append(PendingFragment(piece, dst_rank, device, cands))
    return fragments


def planner_for(planners: Sequence[BasePlanner], kind: StateKind) -> BasePlanner:
    for planner in planners:
        if planner.state_kind == kind:
            return planner
    raise KeyError(kind)
