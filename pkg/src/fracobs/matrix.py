"""Built-in test matrix: fractional orders crossed with cap obstacles.

The third obstacle has a middle cap tuned to the height where it just
touches the solution, which produces an isolated contact point with
quadratic growth of ``u - phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagnostics import DiagnosticsConfig
from .domain import Cap, ObstacleSpec, SolutionField, build_grid, make_cap_obstacle, make_multi_cap_obstacle
from .freeboundary import Bracket, FreeBoundaryConfig, FreeBoundaryReport, analyze_free_boundary, critical_height
from .lcp import DiscreteOperator, SolverConfig, assemble_operator, solve_obstacle

S_VALUES = (0.25, 0.5, 0.75)


def wide_cap() -> ObstacleSpec:
    return make_cap_obstacle(0.2, 1.0, 0.6, 0.2)


def offset_cap() -> ObstacleSpec:
    return make_cap_obstacle(0.3, 3.0, 0.35, 0.15, center=(0.1,))


def three_caps(h_mid: float) -> ObstacleSpec:
    """Two supercritical side caps and a middle cap of height ``h_mid``."""
    caps = [
        Cap((-0.55,), 0.15, 3.0, 0.25, 0.05),
        Cap((0.0,), float(h_mid), 5.0, 0.22, 0.03),
        Cap((0.55,), 0.15, 3.0, 0.25, 0.05),
    ]
    return make_multi_cap_obstacle(caps, floor=-0.1)


MIDDLE_REGION = 0.2


@dataclass
class MatrixCase:
    s: float
    name: str
    obstacle: ObstacleSpec
    field: SolutionField
    op: DiscreteOperator
    bracket: Bracket | None = None
    report: FreeBoundaryReport | None = None
    extra: dict = field(default_factory=dict)


def solve_case(s: float, name: str, nx: int = 513, solver: SolverConfig = SolverConfig()) -> MatrixCase:
    g = build_grid(1, s, 1.0, 1.0, nx, (nx + 1) // 2)
    op = assemble_operator(g)
    if name == "wide_cap":
        ob = wide_cap()
        return MatrixCase(s, name, ob, solve_obstacle(op, ob, solver), op)
    if name == "offset_cap":
        ob = offset_cap()
        return MatrixCase(s, name, ob, solve_obstacle(op, ob, solver), op)
    if name == "three_caps":
        region = np.abs(g.xs) < MIDDLE_REGION
        bracket, f = critical_height(three_caps, op, region, 1e-3, 0.2, solver)
        return MatrixCase(s, name, three_caps(bracket.above), f, op, bracket)
    raise ValueError(f"unknown case {name!r}")


CASES = ("wide_cap", "offset_cap", "three_caps")


def run_matrix(
    s_values=S_VALUES,
    cases=CASES,
    nx: int = 513,
    diag_cfg: DiagnosticsConfig = DiagnosticsConfig(),
    fb_cfg: FreeBoundaryConfig = FreeBoundaryConfig(),
) -> list[MatrixCase]:
    out = []
    for s in s_values:
        for name in cases:
            case = solve_case(s, name, nx)
            case.report = analyze_free_boundary(case.field, case.obstacle, case.op, diag_cfg, fb_cfg)
            out.append(case)
    return out
