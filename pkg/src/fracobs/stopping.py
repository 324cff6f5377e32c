"""Monte-Carlo optimal stopping for the symmetric stable process.

The process ``X_t`` has characteristic function ``exp(-t |xi|^alpha)``
per axis, ``alpha = 2s``, so in one dimension its generator is exactly
``-(-Delta)^s`` in the Fourier normalisation.  Paths start at ``x``, are
killed on leaving the payoff interval ``|x| <= support`` (payoff 0, the
exterior value) and are otherwise stopped according to a strategy.

The PDE oracle for this problem is the exterior-value obstacle problem:
trace pinned to 0 outside the payoff interval and far-field Dirichlet data
from the Poisson kernel of the extension, see :func:`solve_exterior`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.special import gamma as gamma_fn
from scipy.stats import levy_stable

from .domain import ObstacleSpec, SolutionField, build_grid
from .lcp import DiscreteOperator, SolverConfig, assemble_operator, solve_obstacle
from .quadrature import GridInterpolator


class StoppingError(ValueError):
    pass


@dataclass(frozen=True)
class StableProcessConfig:
    """Time stepping of the stable process.

    Increments over a step are ``scale * dt^(1/alpha) * S`` with ``S``
    standard symmetric alpha-stable.  Paths are simulated in blocks of
    ``block`` paths; block ``k`` draws from ``SeedSequence([rng_seed, k])`` so
    results do not depend on how blocks are scheduled.
    """

    alpha: float = 1.0
    dt: float = 1e-3
    scale: float = 1.0
    rng_seed: int = 0
    n_paths: int = 100_000
    max_time: float = 20.0
    support: float = 1.0
    n: int = 1
    block: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise StoppingError("alpha must lie in (0, 2)")
        if self.dt <= 0 or self.max_time <= 0:
            raise StoppingError("dt and max_time must be positive")
        if self.n_paths <= 0:
            raise StoppingError("at least one path is required")

    @property
    def s(self) -> float:
        return self.alpha / 2.0

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.max_time / self.dt - 1e-9))


def block_rng(cfg: StableProcessConfig, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, k]))


def sample_increment(cfg: StableProcessConfig, rng: np.random.Generator, size=None, dt: float | None = None):
    """Symmetric stable increments over a step (independent per axis for ``n = 2``).

    scipy draws them with the Chambers-Mallows-Stuck transform.
    """
    dt = cfg.dt if dt is None else dt
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    if cfg.n > 1:
        shape = shape + (cfg.n,)
    z = levy_stable.rvs(cfg.alpha, 0.0, size=shape if shape else None, random_state=rng)
    return cfg.scale * dt ** (1.0 / cfg.alpha) * np.asarray(z)


# --------------------------------------------------------------------------
# strategies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    kind: str
    t: float | None = None
    eps: float = 0.0

    @property
    def label(self) -> str:
        if self.kind == "stop_at_fixed_time":
            return f"{self.kind}({self.t:g})"
        if self.kind == "stop_on_contact" and self.eps > 0:
            return f"{self.kind}(eps={self.eps:g})"
        return self.kind


def stop_on_contact(eps: float = 0.0) -> Strategy:
    """Stop on entering the contact set dilated by ``eps``."""
    return Strategy("stop_on_contact", eps=float(eps))


def stop_immediately() -> Strategy:
    return Strategy("stop_immediately")


def stop_at_fixed_time(t: float) -> Strategy:
    if t < 0:
        raise StoppingError("stopping time must be nonnegative")
    return Strategy("stop_at_fixed_time", t=float(t))


def never_stop() -> Strategy:
    return Strategy("never_stop")


class ContactLookup:
    """Nearest-node membership in a (dilated) trace contact mask."""

    def __init__(self, grid, contact_mask: np.ndarray, eps: float = 0.0):
        self.grid = grid
        mask = np.asarray(contact_mask, dtype=bool)
        if eps > 0:
            dist = distance_transform_edt(~mask) * grid.hx
            mask = dist <= eps + 1e-12
        self.mask = mask

    def __call__(self, x: np.ndarray) -> np.ndarray:
        g = self.grid
        x = np.asarray(x, dtype=float).reshape(-1, g.n)
        idx = np.rint((x + g.x_box) / g.hx).astype(int)
        inside = np.all((idx >= 0) & (idx < g.nx), axis=-1)
        idx = np.clip(idx, 0, g.nx - 1)
        return inside & self.mask[tuple(idx.T)]


@dataclass(frozen=True)
class StoppingEstimate:
    x: tuple[float, ...]
    strategy: str
    mean: float
    se: float
    truncated: float
    n_paths: int

    def row(self):
        return [*(repr(float(c)) for c in self.x), self.strategy, repr(self.mean), repr(self.se), repr(self.truncated)]


def _payoff(obstacle: ObstacleSpec, pts: np.ndarray, support: float) -> np.ndarray:
    pts = pts.reshape(-1, obstacle.n)
    out = np.zeros(len(pts))
    inside = np.all(np.abs(pts) <= support, axis=-1)
    if np.any(inside):
        out[inside] = obstacle.eval_phi(pts[inside])
    return out


def _simulate(obstacle, cfg, x0, strategy, contact: ContactLookup | None):
    """Payoffs of all paths and the number truncated at ``max_time``."""
    n = cfg.n
    x0 = np.asarray(x0, dtype=float).reshape(n)
    if strategy.kind == "stop_at_fixed_time":
        steps = int(round(strategy.t / cfg.dt))
    else:
        steps = cfg.n_steps
    payoffs = np.empty(cfg.n_paths)
    truncated = 0
    for k, start in enumerate(range(0, cfg.n_paths, cfg.block)):
        m = min(cfg.block, cfg.n_paths - start)
        rng = block_rng(cfg, k)
        pos = np.tile(x0, (m, 1))
        value = np.zeros(m)
        alive = np.ones(m, dtype=bool)
        if strategy.kind == "stop_on_contact":
            hit = contact(pos)
            value[hit] = _payoff(obstacle, pos[hit], cfg.support)
            alive &= ~hit
        for _ in range(steps):
            if not np.any(alive):
                break
            live = np.nonzero(alive)[0]
            pos[live] += sample_increment(cfg, rng, len(live)).reshape(len(live), n)
            out = np.any(np.abs(pos[live]) > cfg.support, axis=-1)
            # killed on exit: exterior payoff is 0
            alive[live[out]] = False
            if strategy.kind == "stop_on_contact":
                rest = live[~out]
                hit = contact(pos[rest])
                value[rest[hit]] = _payoff(obstacle, pos[rest[hit]], cfg.support)
                alive[rest[hit]] = False
        if np.any(alive):
            live = np.nonzero(alive)[0]
            value[live] = _payoff(obstacle, pos[live], cfg.support)
            if strategy.kind != "stop_at_fixed_time":
                truncated += len(live)
        payoffs[start : start + m] = value
    return payoffs, truncated


def estimate_value(
    field_: SolutionField | None,
    obstacle: ObstacleSpec,
    cfg: StableProcessConfig,
    x,
    strategy: Strategy,
    contact_mask: np.ndarray | None = None,
) -> StoppingEstimate:
    """Monte-Carlo payoff of ``strategy`` started at ``x``.

    ``contact_mask`` (trace nodes of ``field_.grid``) is required for
    ``stop_on_contact``.  Paths still running at ``max_time`` are stopped
    there and counted in the truncation fraction.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if cfg.n_paths <= 0:
        raise StoppingError("zero paths")
    if strategy.kind == "stop_immediately":
        val = float(_payoff(obstacle, x[None, :], cfg.support)[0])
        return StoppingEstimate(tuple(x), strategy.label, val, 0.0, 0.0, cfg.n_paths)
    contact = None
    if strategy.kind == "stop_on_contact":
        if contact_mask is None or field_ is None:
            raise StoppingError("stop_on_contact needs a field and its contact mask")
        contact = ContactLookup(field_.grid, contact_mask, strategy.eps)
    elif strategy.kind not in ("stop_at_fixed_time", "never_stop"):
        raise StoppingError(f"unknown strategy {strategy.kind!r}")
    pay, trunc = _simulate(obstacle, cfg, x, strategy, contact)
    se = float(pay.std(ddof=1) / math.sqrt(len(pay))) if len(pay) > 1 else 0.0
    return StoppingEstimate(tuple(x), strategy.label, float(pay.mean()), se, trunc / len(pay), len(pay))


def estimates_to_csv(estimates) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(estimates[0].x) if estimates else 1
    w.writerow([f"x{k}" for k in range(n)] + ["strategy", "J", "SE", "truncated"])
    for e in estimates:
        w.writerow(e.row())
    return buf.getvalue()


# --------------------------------------------------------------------------
# PDE side
# --------------------------------------------------------------------------


def poisson_constant(n: int, s: float) -> float:
    """Normalisation of the extension Poisson kernel ``c y^(2s) / (|x|^2 + y^2)^((n+2s)/2)``."""
    return gamma_fn((n + 2.0 * s) / 2.0) / (math.pi ** (n / 2.0) * gamma_fn(s))


def poisson_extension(grid, trace: np.ndarray, points_x: np.ndarray, points_y: np.ndarray) -> np.ndarray:
    """Extension of trace data at ``(x, y)``, ``y > 0``, by trapezoidal quadrature."""
    s = grid.s
    c = poisson_constant(grid.n, s)
    t = grid.trace_points().reshape(-1, grid.n)
    f = np.asarray(trace, dtype=float).ravel()
    w = np.full(len(f), grid.hx**grid.n)
    keep = f != 0
    t, f, w = t[keep], f[keep], w[keep]
    px = np.asarray(points_x, dtype=float).reshape(-1, grid.n)
    py = np.asarray(points_y, dtype=float).ravel()
    out = np.empty(len(py))
    for lo in range(0, len(py), 2048):
        d2 = np.sum((px[lo : lo + 2048, None, :] - t[None, :, :]) ** 2, axis=-1) + py[lo : lo + 2048, None] ** 2
        ker = c * py[lo : lo + 2048, None] ** (2.0 * s) / d2 ** ((grid.n + 2.0 * s) / 2.0)
        out[lo : lo + 2048] = ker @ (w * f)
    return out


@dataclass
class ExteriorSolution:
    field: SolutionField
    op: DiscreteOperator
    support: float
    far_field_change: float


def solve_exterior(
    obstacle: ObstacleSpec,
    s: float,
    support: float = 1.0,
    x_box: float = 1.5,
    y_max: float = 1.5,
    nx: int = 385,
    ny: int = 193,
    iterations: int = 4,
    tol: float = 1e-10,
) -> ExteriorSolution:
    """Obstacle problem on the whole line with exterior value 0 outside ``|x| <= support``.

    The extension is truncated to a box whose outer Dirichlet data come from
    the Poisson kernel applied to the current trace; a few fixed-point passes
    make them consistent.
    """
    g = build_grid(obstacle.n, s, x_box, y_max, nx, ny)
    op = assemble_operator(g)
    coords = g.node_coordinates()
    bmask = np.array(op.boundary_mask)
    bmask[..., 0] = False
    bx = np.stack([c[bmask] for c in coords[:-1]], axis=-1)
    by = coords[-1][bmask]
    data = np.zeros(g.shape)
    field_ = None
    change = np.inf
    for _ in range(iterations):
        cfg = SolverConfig(tol=tol, boundary_data=data, pin_trace_outside=support)
        field_ = solve_obstacle(op, obstacle, cfg, initial=None if field_ is None else field_.values)
        new = np.zeros(g.shape)
        new[bmask] = poisson_extension(g, field_.trace, bx, by)
        change = float(np.max(np.abs(new - data)))
        data = new
        if change <= tol * max(obstacle.positive_part_sup(), 1.0):
            break
    return ExteriorSolution(field_, op, support, change)


def trace_value(field_: SolutionField, x) -> np.ndarray:
    """Cubic interpolation of the trace at points ``x``."""
    g = field_.grid
    x = np.asarray(x, dtype=float).reshape(-1, g.n)
    return GridInterpolator(g, field_.values)(x, np.zeros(len(x)))


def extrapolated_value(
    obstacle: ObstacleSpec,
    s: float,
    x,
    support: float = 1.0,
    x_box: float = 1.5,
    sizes=(193, 385),
) -> tuple[np.ndarray, ExteriorSolution]:
    """PDE value at ``x`` extrapolated from two grids (first-order Richardson).

    The exterior solve converges at first order in ``hx`` near the pinned
    trace; ``2 u_fine - u_coarse`` removes the leading term.  Returns the
    values and the fine solution.
    """
    coarse, fine = (
        solve_exterior(obstacle, s, support, x_box, x_box, nx, (nx + 1) // 2) for nx in sizes
    )
    x = np.asarray(x, dtype=float).reshape(-1, obstacle.n)
    return 2.0 * trace_value(fine.field, x) - trace_value(coarse.field, x), fine


@dataclass(frozen=True)
class MartingaleReport:
    x: tuple[float, ...]
    u: float
    mean: float
    se: float
    bias_budget: float
    passed: bool


def martingale_check(
    field_: SolutionField,
    cfg: StableProcessConfig,
    x,
    delta: float,
    obstacle: ObstacleSpec | None = None,
    contact_tol: float = 1e-9,
    bias_budget: float | None = None,
) -> MartingaleReport:
    """Compare ``u(x)`` with ``E u(x + X_delta)`` (``u`` is 0 off the payoff interval).

    ``bias_budget`` defaults to ``delta^2`` times the trace sup, a stand-in
    for the ``o(delta)`` remainder.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u0 = float(trace_value(field_, x)[0])
    if obstacle is not None:
        if u0 - float(obstacle.eval_phi(x[None, :])[0]) <= contact_tol:
            raise StoppingError("x lies in the contact set")
    g = field_.grid
    vals = []
    for k, start in enumerate(range(0, cfg.n_paths, cfg.block)):
        m = min(cfg.block, cfg.n_paths - start)
        rng = block_rng(cfg, k)
        pts = x[None, :] + sample_increment(cfg, rng, m, dt=delta).reshape(m, g.n)
        v = np.zeros(m)
        inside = np.all(np.abs(pts) <= cfg.support, axis=-1)
        if np.any(inside):
            v[inside] = trace_value(field_, pts[inside])
        vals.append(v)
    vals = np.concatenate(vals)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    budget = delta**2 * float(np.max(np.abs(field_.trace))) if bias_budget is None else bias_budget
    return MartingaleReport(tuple(x), u0, mean, se, budget, abs(u0 - mean) <= 3.0 * se + budget)
