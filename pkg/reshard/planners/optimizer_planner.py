"""
Optimizer planner: master weights and Adam moments as flat intervals.

With ZeRO, each rank holds the inverted flat-buffer shard of its DP group
(project_optimizer). Without ZeRO the optimizer is replicated like the
parameters and routed over their flat form. Toggling ZeRO across a transition
is rejected.
"""

from ..errors import ConfigError
from ..models import ParallelConfig, PrecisionPolicy
from ..regions import RegionSet
from ..vps import Vps, optimizer_region
from .base_planner import BasePlanner, StateKind


class OptimizerPlanner(BasePlanner):
    name = "optimizer"
    display_name = "Optimizer state"
    state_kind = StateKind.OPTIMIZER

    def regions(self, vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
        return optimizer_region(vps, cfg, rank)

    def element_bytes(self, vps: Vps, tensor_id: str, policy: PrecisionPolicy) -> int:
        return policy.optimizer_bytes

    def is_enabled(self, gradients: str) -> bool:
        return True

    def check(self, src_cfg: ParallelConfig, dst_cfg: ParallelConfig) -> None:
        if src_cfg.zero_enabled != dst_cfg.zero_enabled:
            raise ConfigError("zero_enabled mismatch between src and dst is unsupported", ("dst", "zero_enabled"))
