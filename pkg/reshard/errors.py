"""
Exception hierarchy and violation records.

Exit-code contract used by the CLI (see reshard/main.py):
  ConfigError (and ScenarioError)  → 2   input error
  every other ReshardError         → 1   plan / verification / simulation failure

Operations that "return violations" (validate_plan, verify_state, check_layouts)
never raise for a violation; they return Violation records instead.
"""

from dataclasses import dataclass
from typing import Optional, Tuple


class ReshardError(Exception):
    """Base class for every failure raised by this package."""

    exit_code = 1


class ConfigError(ReshardError):
    """Invalid model, parallel configuration or scenario input.

    `path` locates the offending field inside a scenario document, e.g.
    ("src", "tp"), so the loader can anchor the diagnostic to a line.
    """

    exit_code = 2

    def __init__(self, message: str, path: Tuple = ()):
        super().__init__(message)
        self.path = tuple(path)


class ScenarioError(ConfigError):
    """A ConfigError anchored to a file and line."""

    def __init__(self, message: str, source: str, line: Optional[int] = None, path: Tuple = ()):
        super().__init__(message, path)
        self.source = source
        self.line = line

    def __str__(self) -> str:
        where = f"{self.source}:{self.line}" if self.line else self.source
        return f"{where}: {self.args[0]}"


class RegionError(ReshardError):
    """Region algebra applied to RegionSets bound to different spaces."""


class PlanError(ReshardError):
    """Planning failed, e.g. a destination fragment has no source."""


class InfeasibleBudgetError(ReshardError):
    """A single step or collective does not fit the global memory budget."""


class SimulationError(ReshardError):
    """Simulator failure."""


class OutOfMemoryError(SimulationError):
    def __init__(self, rank: int, stage: str, requested: int, cap: int):
        super().__init__(
            f"OOM on rank {rank} during {stage}: {requested} transient bytes exceed cap {cap}"
        )
        self.rank = rank
        self.stage = stage
        self.requested = requested
        self.cap = cap


class StateError(SimulationError):
    """A sender does not hold the payload it was scheduled to send."""


@dataclass(frozen=True)
class Violation:
    """One failed check. `code` is a stable short phrase used by tests and reports."""

    code: str
    rank: Optional[int]
    detail: str

    def __str__(self) -> str:
        who = f"rank {self.rank}" if self.rank is not None else "plan"
        return f"{self.code} ({who}): {self.detail}"
