"""Finite-difference solvers for the exploratory HJB and the classical obstacle problem."""

from .boundary import BoundaryCurve, extract_boundary, write_boundaries
from .grid import (PolicySurface, SpaceTimeGrid, ValueField, build_grid, default_halfwidth,
                   sup_distance)
from .operator import TridiagonalOperator, assemble_operator, implicit_step
from .policy import (IterationTrace, TraceRecord, payoff_field, policy_eval_pde, policy_improve,
                     policy_iterate, threshold_value_pde)
from .solvers import solve_classical_vi, solve_european, solve_exploratory_hjb

__all__ = [
    "BoundaryCurve", "IterationTrace", "PolicySurface", "SpaceTimeGrid", "TraceRecord",
    "TridiagonalOperator", "ValueField", "assemble_operator", "build_grid", "default_halfwidth",
    "extract_boundary", "implicit_step", "payoff_field", "policy_eval_pde", "policy_improve",
    "policy_iterate", "solve_classical_vi", "solve_european", "solve_exploratory_hjb",
    "sup_distance", "threshold_value_pde", "write_boundaries",
]
