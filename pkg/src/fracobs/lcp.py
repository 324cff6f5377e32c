"""Discrete weighted operator and the projected SOR obstacle solver.

The operator is a node-centred finite-volume discretisation of
``-div(|y|^a grad u)`` on the upper half grid.  Each row holds the net
flux out of the dual cell of its node.  Rows on the trace ``y = 0`` use the
half cell and are multiplied by two, which is the flux balance of the full
cell under even reflection; their value is therefore the discrete analogue
of the jump of ``|y|^a u_y`` across the trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
import scipy.sparse as sps

from .domain import ExtensionGrid, ObstacleSpec, SolutionField

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class InfeasibleBoundary(ValueError):
    """Dirichlet data lies below the obstacle on the trace."""


@dataclass(frozen=True)
class DiscreteOperator:
    grid: ExtensionGrid
    matrix: sps.csr_matrix = field(repr=False)
    boundary_mask: np.ndarray = field(repr=False)
    trace_mask: np.ndarray = field(repr=False)

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Flux residual at every node; meaningless on boundary nodes."""
        out = self.matrix @ np.ravel(values)
        return out.reshape(self.grid.shape)

    def weighted_volume(self) -> np.ndarray:
        """Weighted control volume ``hx^n * int |y|^a dy`` of each row (trace rows doubled)."""
        g = self.grid
        vol = np.broadcast_to(g.x_weight * g.hx**g.n, g.shape).copy()
        vol[..., 0] *= 2.0
        return vol

    def pointwise_residual(self, values: np.ndarray) -> np.ndarray:
        """Flux residual divided by the weighted volume, an approximation of ``L_a u``."""
        return self.apply(values) / self.weighted_volume()

    def cell_measure(self) -> np.ndarray:
        """Weights making the matrix symmetric: 1/2 on trace rows, 1 elsewhere."""
        m = np.ones(self.grid.shape)
        m[..., 0] = 0.5
        return m


def assemble_operator(grid: ExtensionGrid) -> DiscreteOperator:
    """Assemble the full node matrix, boundary rows included."""
    shape = grid.shape
    n, nx, ny = grid.n, grid.nx, grid.ny
    hx = grid.hx
    idx = np.arange(grid.size).reshape(shape)
    rows, cols, vals = [], [], []

    # x-direction couplings: face of width hx^(n-1) in the other x axes and
    # weighted height x_weight[j] in y, distance hx
    cx = grid.x_weight * hx ** (n - 2)
    for axis in range(n):
        lo = [slice(None)] * (n + 1)
        hi = [slice(None)] * (n + 1)
        lo[axis] = slice(0, nx - 1)
        hi[axis] = slice(1, nx)
        i0 = idx[tuple(lo)].ravel()
        i1 = idx[tuple(hi)].ravel()
        c = np.broadcast_to(cx, idx[tuple(lo)].shape).ravel()
        rows += [i0, i1]
        cols += [i1, i0]
        vals += [-c, -c]

    # y-direction couplings
    cy = grid.y_transmissibility * hx**n
    i0 = idx[..., :-1].ravel()
    i1 = idx[..., 1:].ravel()
    c = np.broadcast_to(cy, idx[..., :-1].shape).ravel()
    rows += [i0, i1]
    cols += [i1, i0]
    vals += [-c, -c]

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sps.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    mat = (off + sps.diags(diag)).tocsr()

    trace_mask = np.zeros(shape, dtype=bool)
    trace_mask[..., 0] = True
    scale = np.where(trace_mask.ravel(), 2.0, 1.0)
    mat = sps.diags(scale) @ mat
    mat = mat.tocsr()
    mat.sort_indices()

    boundary = np.zeros(shape, dtype=bool)
    for axis in range(n):
        sl = [slice(None)] * (n + 1)
        sl[axis] = 0
        boundary[tuple(sl)] = True
        sl[axis] = nx - 1
        boundary[tuple(sl)] = True
    boundary[..., ny - 1] = True
    for arr in (boundary, trace_mask):
        arr.setflags(write=False)
    return DiscreteOperator(grid, mat, boundary, trace_mask)


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Projected SOR settings.

    ``omega = None`` picks the optimal SOR factor estimate for the grid.
    ``boundary_data`` is ``None`` for homogeneous Dirichlet data, a callable
    ``f(x, y)`` taking the coordinate arrays of :meth:`ExtensionGrid.node_coordinates`,
    or an array of nodal values (only boundary entries are read).
    ``pin_trace_outside`` pins trace nodes with ``|x|_inf > value`` to the
    boundary data, which turns the box problem into the exterior-value
    problem on the interval ``|x| <= value``.
    """

    omega: float | None = None
    tol: float = 1e-10
    max_iters: int = 200_000
    check_every: int = 25
    boundary_data: Callable | np.ndarray | None = None
    pin_trace_outside: float | None = None

    def __post_init__(self):
        if self.omega is not None and not 0.0 < self.omega < 2.0:
            raise ValueError("omega must lie in (0, 2)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def optimal_omega(grid: ExtensionGrid) -> float:
    """SOR factor for the model Laplacian on the grid's longest node line."""
    m = max(grid.nx, grid.ny)
    return 2.0 / (1.0 + np.sin(np.pi / (m - 1)))


@numba.njit(cache=True)
def _psor_sweeps(indptr, indices, data, diag, b, u, lower, is_trace, omega, sweeps):
    nrow = u.shape[0]
    for _ in range(sweeps):
        for i in range(nrow):
            acc = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                acc -= data[k] * u[indices[k]]
            new = u[i] + omega * acc / diag[i]
            if is_trace[i] and new < lower[i]:
                new = lower[i]
            u[i] = new


@numba.njit(cache=True)
def _complementarity_residual(indptr, indices, data, diag, b, u, lower, is_trace):
    worst = 0.0
    nrow = u.shape[0]
    for i in range(nrow):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * u[indices[k]]
        rho = (acc - b[i]) / diag[i]
        if is_trace[i]:
            gap = u[i] - lower[i]
            r = abs(min(gap, rho))
        else:
            r = abs(rho)
        if r > worst:
            worst = r
    return worst


def boundary_values(grid: ExtensionGrid, cfg: SolverConfig) -> np.ndarray:
    if cfg.boundary_data is None:
        return np.zeros(grid.shape)
    if callable(cfg.boundary_data):
        vals = np.asarray(cfg.boundary_data(*grid.node_coordinates()), dtype=float)
    else:
        vals = np.asarray(cfg.boundary_data, dtype=float)
    return np.broadcast_to(vals, grid.shape).copy()


def dirichlet_mask(op: DiscreteOperator, cfg: SolverConfig) -> np.ndarray:
    mask = np.array(op.boundary_mask)
    if cfg.pin_trace_outside is not None:
        pts = op.grid.trace_points()
        outside = np.max(np.abs(pts), axis=-1) > cfg.pin_trace_outside + 1e-12
        mask[..., 0] |= outside
    return mask


def solve_obstacle(
    op: DiscreteOperator,
    obstacle: ObstacleSpec,
    cfg: SolverConfig = SolverConfig(),
    initial: np.ndarray | None = None,
) -> SolutionField:
    """Solve the discrete obstacle problem on the trace by projected SOR."""
    grid = op.grid
    if obstacle.n != grid.n:
        raise ValueError("obstacle dimension does not match grid")
    phi = obstacle.eval_phi(grid.trace_points())
    bvals = boundary_values(grid, cfg)
    dmask = dirichlet_mask(op, cfg)

    trace_dirichlet = dmask[..., 0]
    if np.any(bvals[..., 0][trace_dirichlet] < phi[trace_dirichlet] - 1e-14):
        raise InfeasibleBoundary("boundary data lies below the obstacle on the trace boundary")

    free = ~dmask.ravel()
    A = op.matrix
    A_ff = A[free][:, free].tocsr()
    A_fd = A[free][:, ~free]
    b = -(A_fd @ bvals.ravel()[~free])

    lower_full = np.full(grid.shape, -np.inf)
    lower_full[..., 0] = phi
    lower = lower_full.ravel()[free]
    is_trace = op.trace_mask.ravel()[free]

    if initial is None:
        u0 = np.zeros(grid.shape)
        u0[..., 0] = np.maximum(phi, 0.0)
    else:
        u0 = np.array(initial, dtype=float)
    u0 = np.where(dmask, bvals, u0)
    u = u0.ravel()[free].copy()
    u = np.where(is_trace, np.maximum(u, lower), u)

    diag = A_ff.diagonal().copy()
    scale = float(np.max(np.maximum(phi, 0.0), initial=0.0))
    if scale == 0.0:
        scale = max(float(np.max(np.abs(bvals))), 1.0)
    target = cfg.tol * scale

    omega = cfg.omega if cfg.omega is not None else optimal_omega(grid)
    args = (A_ff.indptr, A_ff.indices, A_ff.data, diag, b, u, lower, is_trace)
    history = []
    iters = 0
    res = _complementarity_residual(*args)
    history.append(res)
    stagnant = 0
    while res > target and iters < cfg.max_iters:
        _psor_sweeps(*args[:-2], lower, is_trace, omega, cfg.check_every)
        iters += cfg.check_every
        new = _complementarity_residual(*args)
        if new > 0.999 * res:
            stagnant += 1
            if stagnant >= 40 and omega != 1.0:
                log.info("residual stagnating at %.3e, falling back to omega = 1", new)
                omega = 1.0
                stagnant = 0
        else:
            stagnant = 0
        res = new
        history.append(res)
    if res > target:
        raise NonConvergence(f"projected SOR stopped at residual {res:.3e} after {iters} sweeps", history)

    full = bvals.ravel().copy()
    full[free] = u
    values = full.reshape(grid.shape)
    values.setflags(write=False)
    return SolutionField(grid, values, True, float(res), iters, tuple(history))


def energy(op: DiscreteOperator, values: np.ndarray) -> float:
    """Discrete weighted Dirichlet energy, half-domain version."""
    u = np.ravel(values)
    w = op.cell_measure().ravel()
    return 0.5 * float(u @ (w * (op.matrix @ u)))


def trace_residual(op: DiscreteOperator, field_: SolutionField) -> np.ndarray:
    """Discrete flux residual on the trace (the complementarity slack)."""
    return op.apply(field_.values)[..., 0]


@dataclass(frozen=True)
class MonotonicityReport:
    max_increase: float
    passed: bool


def monotonicity_check(field_: SolutionField, tol: float = 1e-9) -> MonotonicityReport:
    """Largest forward difference ``u(x, y + hy) - u(x, y)`` over the grid."""
    diff = np.diff(field_.values, axis=-1)
    worst = float(diff.max(initial=0.0))
    scale = max(float(np.abs(field_.values).max(initial=0.0)), 1.0)
    return MonotonicityReport(worst, worst <= tol * scale)
