"""Optimal event-triggered LQ control over a finite horizon."""
from .model import (InstanceError, ProblemInstance, Solution, SolverStats, Status, Trajectory, build_regions,
                    check_trigger_consistency, classify, evaluate_cost, event_set, simulate)
from .tolerances import DEFAULT, Tolerances

__version__ = "0.1.0"

__all__ = [
    "InstanceError", "ProblemInstance", "Solution", "SolverStats", "Status", "Trajectory", "build_regions",
    "check_trigger_consistency", "classify", "evaluate_cost", "event_set", "simulate", "DEFAULT", "Tolerances",
]
