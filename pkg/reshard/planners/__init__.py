"""
Planner registry, the single registration point for region-valued state.

To add a new state kind:
  1. Create reshard/planners/{name}_planner.py implementing BasePlanner
  2. Import and add an instance to ALL_PLANNERS below
  3. Teach the simulator (reshard/cluster.py) to load and verify the kind

Dataset and scalar state are not regions; plan_dataset and plan_scalars are
exported alongside the registry.
"""

from .base_planner import (
    BasePlanner,
    PendingFragment,
    RankPlan,
    RoutingPlan,
    SliceTransfer,
    StateKind,
    WorldMap,
    planner_for,
)
from .dataset_planner import DataloaderPlan, first_step_samples, plan_dataset
from .gradient_planner import GradientPlanner
from .optimizer_planner import OptimizerPlanner
from .parameter_planner import ParameterPlanner
from .scalar_planner import SCALAR_FIELDS, ScalarBroadcast, plan_scalars

ALL_PLANNERS = [
    ParameterPlanner(),
    OptimizerPlanner(),
    GradientPlanner(),
]

__all__ = [
    "ALL_PLANNERS",
    "BasePlanner",
    "DataloaderPlan",
    "PendingFragment",
    "RankPlan",
    "RoutingPlan",
    "SCALAR_FIELDS",
    "ScalarBroadcast",
    "SliceTransfer",
    "StateKind",
    "WorldMap",
    "first_step_samples",
    "plan_dataset",
    "plan_scalars",
    "planner_for",
]
