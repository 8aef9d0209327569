"""
Scalar state (iteration, consumed samples, RNG seed, scheduler step, loss
scale): src-world rank 0 is the source of truth and broadcasts the blob to
every dst-world device. A single-device world, or a transition that changes
neither the configuration nor the devices, needs no broadcast.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

from ..models import ParallelConfig
from ..regions import RegionSet
from .base_planner import SliceTransfer, StateKind, WorldMap

SCALAR_FIELDS = ("iteration", "consumed_samples", "rng_seed", "lr_scheduler_step", "loss_scale")
SCALAR_BYTES = 8 * len(SCALAR_FIELDS)
SCALAR_TENSOR = "<scalars>"


@dataclass(frozen=True)
class ScalarBroadcast:
    root_rank: int
    root_device: int
    participants: Tuple[int, ...]   # sorted devices, root included
    dst_ranks: Tuple[int, ...]      # dst-world rank of each non-root participant
    nbytes: int = SCALAR_BYTES
    fields: Tuple[str, ...] = SCALAR_FIELDS

    @property
    def is_noop(self) -> bool:
        return len(self.participants) <= 1

    def transfers(self, space: str) -> List[SliceTransfer]:
        """The broadcast as one logical transfer per receiver."""
        receivers = [d for d in self.participants if d != self.root_device]
        return [
            SliceTransfer(
                state_kind=StateKind.SCALAR, tensor_id=SCALAR_TENSOR, region=RegionSet.empty(space),
                src_rank=self.root_rank, dst_rank=rank, src_device=self.root_device, dst_device=device,
                numel=len(self.fields), bytes=self.nbytes,
            )
            for device, rank in zip(receivers, self.dst_ranks)
        ]


def plan_scalars(
    src_cfg: ParallelConfig,
    dst_cfg: ParallelConfig,
    world_map: Optional[WorldMap] = None,
) -> ScalarBroadcast:
    if world_map is None:
        world_map = WorldMap.build(src_cfg.world_size, dst_cfg.world_size)
    root = world_map.src_devices[0]
    if src_cfg == dst_cfg and world_map.is_identity:
        return ScalarBroadcast(root_rank=0, root_device=root, participants=(root,), dst_ranks=())
    participants = tuple(sorted(set(world_map.dst_devices) | {root}))
    dst_ranks = tuple(world_map.dst_rank_of(d) for d in participants if d != root)
    return ScalarBroadcast(root_rank=0, root_device=root, participants=participants, dst_ranks=dst_ranks)
