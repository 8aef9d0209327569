"""
Dataloader continuity across a DP change.

Samples are assigned per step in contiguous blocks over DP ranks: in the step
starting at sample `c`, dp rank r reads [c + r·per_rank, c + (r+1)·per_rank).
After the switch the new DP group resumes exactly at consumed_samples, so no
sample is skipped or read twice.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from ..errors import ConfigError
from ..models import BatchConfig, ParallelConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataloaderPlan:
    consumed_samples: int
    global_batch_size: int
    micro_batch_size: int
    dp: int
    samples_per_rank: int
    micro_batches_per_step: int
    resume_offsets: Tuple[int, ...]
    consumed_by_src_rank: Tuple[int, ...]

    def assignment(self, dp_rank: int, step: int = 0) -> range:
        start = self.resume_offsets[dp_rank] + step * self.global_batch_size
        return range(start, start + self.samples_per_rank)


def _per_rank(global_batch: int, dp: int, micro: int, side: str) -> int:
    if global_batch % (dp * micro):
        raise ConfigError(
            f"invalid batch geometry: global batch {global_batch} not divisible by "
            f"dp={dp} x micro-batch={micro} ({side})",
            ("batch",),
        )
    return global_batch // dp


def plan_dataset(
    src_cfg: ParallelConfig,
    dst_cfg: ParallelConfig,
    consumed_samples: int,
    batch_cfg: BatchConfig,
) -> DataloaderPlan:
    if consumed_samples < 0:
        raise ConfigError("consumed_samples must be non-negative", ("batch", "consumed_samples"))
    old_global = batch_cfg.global_batch_size
    new_global = batch_cfg.new_global_batch_size or old_global
    micro = batch_cfg.micro_batch_size

    old_per_rank = _per_rank(old_global, src_cfg.dp, micro, "source")
    full_steps, partial = divmod(consumed_samples, old_global)
    consumed_by_src = tuple(
        full_steps * old_per_rank + min(max(partial - r * old_per_rank, 0), old_per_rank)
        for r in range(src_cfg.dp)
    )

    per_rank = _per_rank(new_global, dst_cfg.dp, micro, "destination")
    plan = DataloaderPlan(
        consumed_samples=consumed_samples,
        global_batch_size=new_global,
        micro_batch_size=micro,
        dp=dst_cfg.dp,
        samples_per_rank=per_rank,
        micro_batches_per_step=per_rank // micro,
        resume_offsets=tuple(consumed_samples + r * per_rank for r in range(dst_cfg.dp)),
        consumed_by_src_rank=consumed_by_src,
    )
    logger.debug("Dataloader resumes at %d with %d samples per rank", consumed_samples, per_rank)
    return plan


def first_step_samples(plan: Optional[DataloaderPlan]) -> Tuple[int, ...]:
    """Concatenation of every dp rank's first post-switch assignment."""
    if plan is None:
        return ()
    return tuple(i for r in range(plan.dp) for i in plan.assignment(r))
