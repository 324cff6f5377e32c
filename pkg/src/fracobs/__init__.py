"""Numerical laboratory for the fractional obstacle problem in extension form."""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    Cap,
    ExtensionGrid,
    GridError,
    ObstacleError,
    ObstacleSpec,
    QuadraticBlowup,
    SolutionField,
    build_grid,
    eval_p2,
    harmonic_quadratic,
    make_cap_obstacle,
    make_constant_obstacle,
    make_multi_cap_obstacle,
)
from .lcp import (  # noqa: E402
    DiscreteOperator,
    InfeasibleBoundary,
    NonConvergence,
    SolverConfig,
    assemble_operator,
    monotonicity_check,
    solve_obstacle,
)

__all__ = [
    "Cap",
    "DiscreteOperator",
    "ExtensionGrid",
    "GridError",
    "InfeasibleBoundary",
    "NonConvergence",
    "ObstacleError",
    "ObstacleSpec",
    "QuadraticBlowup",
    "SolutionField",
    "SolverConfig",
    "assemble_operator",
    "build_grid",
    "eval_p2",
    "harmonic_quadratic",
    "make_cap_obstacle",
    "make_constant_obstacle",
    "make_multi_cap_obstacle",
    "monotonicity_check",
    "solve_obstacle",
]
