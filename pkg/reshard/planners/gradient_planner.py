"""
Gradient planner, active only in "migrate" mode.

Gradients live on the parameter regions. In the default "drop" mode they are
freed before the first stage instead of being routed.
"""

from ..models import ParallelConfig, PrecisionPolicy
from ..regions import RegionSet
from ..vps import Vps, project
from .base_planner import BasePlanner, StateKind


class GradientPlanner(BasePlanner):
    name = "gradient"
    display_name = "Gradients"
    state_kind = StateKind.GRADIENT

    def regions(self, vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
        return project(vps, cfg, rank)

    def element_bytes(self, vps: Vps, tensor_id: str, policy: PrecisionPolicy) -> int:
        return policy.grad_bytes

    def is_enabled(self, gradients: str) -> bool:
        return gradients == "migrate"
