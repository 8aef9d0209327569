"""
Parameter planner: model weights, routed as per-tensor boxes.

Bytes per element are the tensor's own dtype_bytes.
"""

from ..models import ParallelConfig, PrecisionPolicy
from ..regions import RegionSet
from ..vps import Vps, project
from .base_planner import BasePlanner, StateKind


class ParameterPlanner(BasePlanner):
    name = "parameter"
    display_name = "Parameters"
    state_kind = StateKind.PARAMETER

    def regions(self, vps: Vps, cfg: ParallelConfig, rank: int) -> RegionSet:
        return project(vps, cfg, rank)

    def element_bytes(self, vps: Vps, tensor_id: str, policy: PrecisionPolicy) -> int:
        return vps.tensor(tensor_id).spec.dtype_bytes

    def is_enabled(self, gradients: str) -> bool:
        return True
