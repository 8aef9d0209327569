"""Online resharding planner and deterministic cluster simulator."""

__version__ = "1.0.0"
