"""Single-timestep repositioning model and its exact solvers."""

from dockless.mip.exhaustive import GuardExceeded, solve_exhaustive
from dockless.mip.model import (
    CONSTRAINTS,
    Evaluation,
    ProblemInstance,
    RepositionPlan,
    closed_form_lost_demand,
    evaluate,
    lost_demand_matrix,
    plan_from_moves,
)
from dockless.mip.solver import UnsupportedInstance, solve

__all__ = [
    "CONSTRAINTS", "Evaluation", "GuardExceeded", "ProblemInstance", "RepositionPlan",
    "UnsupportedInstance", "closed_form_lost_demand", "evaluate", "lost_demand_matrix",
    "plan_from_moves", "solve", "solve_exhaustive",
]
