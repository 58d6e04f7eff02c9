"""Pricing-and-relocation MPC: program data, validator, exact and heuristic solvers."""

from .model import (
    MpcInstance,
    MpcSolution,
    Violation,
    build_instance,
    demand_options,
    first_epoch_actions,
    make_instance,
    objective_of,
    validate_solution,
    weight_tables,
)
from .solvers import SolveLimits, solve_exact, solve_heuristic
from .oracle import enumerate_optimum
from .export import build_mip, dump_instance, dump_solution, export_lp, load_instance

__all__ = [
    "MpcInstance", "MpcSolution", "Violation", "build_instance",
    "demand_options", "first_epoch_actions", "make_instance", "objective_of",
    "validate_solution", "weight_tables", "SolveLimits", "solve_exact",
    "solve_heuristic", "enumerate_optimum", "build_mip", "dump_instance",
    "dump_solution", "export_lp", "load_instance",
]
