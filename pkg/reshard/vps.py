"""
Virtual Parameter Space: the global, unsharded, declaration-ordered coordinate
space of every tensor, and the projections of a ParallelConfig into it.

  build_vps(model)                   → Vps (offsets, total_numel, space fingerprint)
  rank_coord / flat_rank             → rank ↔ (pp, dp, tp) bijection under cfg.rank_order
  stage_layers(num_layers, pp, r)    → contiguous, remainder-first layer range
  project(vps, cfg, rank)            → parameter RegionSet (boxes)
  project_optimizer(vps, cfg, rank)  → ZeRO shard as flat intervals
  optimizer_region(vps, cfg, rank)   → optimizer state held by the rank, ZeRO or not
  estimate_state_bytes(model, policy)

The global flat offset of an element is its canonical identity; boxes are views.
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Dict, List, Tuple, Union

import numpy as np

from .errors import ConfigError
from .models import ModelSpec, ParallelConfig, PrecisionPolicy, TensorSpec, get_policy
from .regions import Box, Interval, RegionSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankCoord:
    pp_rank: int
    dp_rank: int
    tp_rank: int
    ep_rank: int
    edp_rank: int


@dataclass(frozen=True)
class TensorLayout:
    spec: TensorSpec
    offset: int
    strides: Tuple[int, ...]

    @property
    def tensor_id(self) -> str:
        return self.spec.tensor_id

    @property
    def numel(self) -> int:
        return self.spec.numel

    @property
    def end(self) -> int:
        return self.offset + self.numel


@dataclass(frozen=True)
class Vps:
    model: ModelSpec
    layouts: Tuple[TensorLayout, ...]
    total_numel: int
    space: str

    @cached_property
    def _by_id(self) -> Dict[str, TensorLayout]:
        return {layout.tensor_id: layout for layout in self.layouts}

    @cached_property
    def _offsets(self) -> np.ndarray:
        return np.array([layout.offset for layout in self.layouts], dtype=np.int64)

    def tensor(self, tensor_id: str) -> TensorLayout:
        return self._by_id[tensor_id]

    def full_region(self) -> RegionSet:
        return RegionSet.from_boxes(
            self.space, {t.tensor_id: [tuple((0, e) for e in t.spec.shape)] for t in self.layouts}
        )

    def box_indices(self, tensor_id: str, box: Box) -> np.ndarray:
        """Global flat offsets of a box, ascending (row-major)."""
        layout = self.tensor(tensor_id)
        ranges = [np.arange(lo, hi, dtype=np.int64) * stride for (lo, hi), stride in zip(box, layout.strides)]
        return reduce(np.add.outer, ranges).ravel() + layout.offset

    def flat_indices(self, region: RegionSet) -> np.ndarray:
        parts = [self.box_indices(tid, box) for tid, boxes in region.boxes for box in boxes]
        parts += [np.arange(lo, hi, dtype=np.int64) for lo, hi in region.flat]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def to_flat(self, region: RegionSet) -> RegionSet:
        return RegionSet.from_flat(self.space, runs(self.flat_indices(region)))

    def tensor_at(self, offset: int) -> TensorLayout:
        return self.layouts[int(np.searchsorted(self._offsets, offset, side="right")) - 1]

    def split_flat(self, intervals: Tuple[Interval, ...]) -> List[Tuple[str, Interval]]:
        """Cut flat intervals at tensor boundaries, labelling each piece with its tensor."""
        pieces = []
        for lo, hi in intervals:
            while lo < hi:
                layout = self.tensor_at(lo)
                cut = min(hi, layout.end)
                pieces.append((layout.tensor_id, (lo, cut)))
                lo = cut
        return pieces


def runs(indices: np.ndarray) -> Tuple[Interval, ...]:
    """Sorted unique indices → maximal half-open runs."""
    if indices.size == 0:
        return ()
    breaks = np.flatnonzero(np.diff(indices) != 1) + 1
    starts = indices[np.r_[0, breaks]]
    ends = indices[np.r_[breaks - 1, indices.size - 1]] + 1
    return tuple((int(lo), int(hi)) for lo, hi in zip(starts, ends))


def _fingerprint(model: ModelSpec) -> str:
    digest = hashlib.sha256()
    for t in model.tensors:
        digest.update(f"{t.tensor_id}:{t.shape}:{t.layer}|".encode())
    return digest.hexdigest()[:12]


def build_vps(model: ModelSpec) -> Vps:
    model.check()
    layouts = []
    offset = 0
    for t in model.tensors:
        strides = tuple(int(np.prod(t.shape[i + 1:], dtype=np.int64)) for i in range(len(t.shape)))
        layouts.append(TensorLayout(spec=t, offset=offset, strides=strides))
        offset += t.numel
    logger.debug("Built VPS with %d tensors, %d elements", len(layouts), offset)
    return Vps(model=model, layouts=tuple(layouts), total_numel=offset, space=_fingerprint(model))


def rank_coord(cfg: ParallelConfig, rank: int) -> RankCoord:
    if not 0 <= rank < cfg.world_size:
        raise ConfigError(f"rank {rank} out of range for world size {cfg.world_size}")
    sizes = {"pp": cfg.pp, "dp": cfg.dp, "tp": cfg.tp}
    coords = {}
    rem = rank
    for axis in reversed(cfg.order):
        coords[axis] = rem % sizes[axis]
        rem //= sizes[axis]
    dp_rank = coords["dp"]
    return RankCoord(
        pp_rank=coords["pp"], dp_rank=dp_rank, tp_rank=coords["tp"],
        ep_rank=dp_rank % cfg.ep, edp_rank=dp_rank // cfg.ep,
    )


def flat_rank(cfg: ParallelConfig, coord: RankCoord) -> int:
    sizes = {"pp": cfg.pp, "dp": cfg.dp, "tp": cfg.tp}
    values = {"pp": coord.pp_rank, "dp": coord.dp_rank, "tp": coord.tp_rank}
    rank = 0
    for axis in cfg.order:
        rank = rank * sizes[axis] + values[axis]
    return rank


def stage_layers(num_layers: int, pp: int, pp_rank: int) -> Tuple[int, int]:
    base, extra = divmod(num_layers, pp)
    start = pp_rank * base + min(pp_rank, extra)
    return start, start + base + (1 if pp_rank < extra else 0)


def _slice(extent: int, parts: int, index: int, what: str) -> Interval:
    if extent % parts:
        raise ConfigError(f"{what}: {parts} does not divide extent {extent}")
    size = extent // parts
    return index * size, (index + 1) * size


def project(vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
    cfg.check_model(vps.model)
    coord = rank_coord(cfg, rank)
    first, last = stage_layers(vps.model.num_layers, cfg.pp, coord.pp_rank)
    boxes = {}
    for layout in vps.layouts:
        t = layout.spec
        if not first <= t.layer < last:
            continue
        box = [(0, e) for e in t.shape]
        if t.tp_shard_axis is not None:
            box[t.tp_shard_axis] = _slice(t.shape[t.tp_shard_axis], cfg.tp, coord.tp_rank, t.tensor_id)
        if t.is_expert:
            box[t.expert_axis] = _slice(t.shape[t.expert_axis], cfg.ep, coord.ep_rank, t.tensor_id)
        boxes[t.tensor_id] = [tuple(box)]
    return RegionSet.from_boxes(vps.space, boxes)


def shard_range(length: int, parts: int, index: int) -> Tuple[int, int]:
    """Ceil-sized contiguous shard, last shard truncated."""
    size = -(-length // parts)
    lo = min(index * size, length)
    return lo, min(lo + size, length)


def project_optimizer(vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
    if not cfg.zero_enabled:
        raise ConfigError("no sharded optimizer: zero_enabled is false")
    params = project(vps, cfg, rank)
    coord = rank_coord(cfg, rank)
    dense, expert = [], []
    for tid, boxes in params.boxes:
        target = expert if vps.tensor(tid).spec.is_expert else dense
        target.extend(vps.box_indices(tid, box) for box in boxes)
    owned = []
    for chunks, parts, index in ((dense, cfg.dp, coord.dp_rank), (expert, cfg.edp, coord.edp_rank)):
        if not chunks:
            continue
        local = np.sort(np.concatenate(chunks))
        lo, hi = shard_range(local.size, parts, index)
        owned.append(local[lo:hi])
    if not owned:
        return RegionSet.empty(vps.space)
    return RegionSet.from_flat(vps.space, runs(np.sort(np.concatenate(owned))))


def optimizer_region(vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
    if cfg.zero_enabled:
        return project_optimizer(vps, cfg, rank)
    return vps.to_flat(project(vps, cfg, rank))


def estimate_state_bytes(model: ModelSpec, policy: Union[str, PrecisionPolicy] = "bf16-fp32-mixed") -> int:
    return model.total_numel * get_policy(policy).bytes_per_element
