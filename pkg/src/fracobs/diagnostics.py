"""Radial functionals around a free boundary point.

All functionals act on the recentred field

    v(x, y) = u(x, y) - phi(x) + (lap_phi(x0) + grad_lap_phi(x0).(x - x0)) y^2 / (2 (1 + a))

whose trace is ``u - phi`` and whose weighted Laplacian is small away from
the contact set.  Surface integrals run over the sphere of radius ``r`` in
``R^{n+1}`` centred at ``(x0, 0)``, bulk integrals over the ball; the lower
half is the even reflection.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import ExtensionGrid, ObstacleSpec, QuadraticBlowup, SolutionField, eval_p2
from .lcp import DiscreteOperator, assemble_operator
from .quadrature import GridInterpolator, radial_rule, sphere_rule


class DiagnosticsError(ValueError):
    pass


class RadiusError(DiagnosticsError):
    """The ball does not fit inside the grid."""


class DegenerateH(DiagnosticsError):
    """The surface integral vanishes, the frequency is undefined."""


@dataclass(frozen=True)
class CenteredField:
    grid: ExtensionGrid
    center: np.ndarray
    values: np.ndarray = field(repr=False)
    order: int = 3

    def __post_init__(self):
        object.__setattr__(self, "_interp", GridInterpolator(self.grid, self.values, self.order))

    @property
    def interpolator(self) -> GridInterpolator:
        return self._interp

    @property
    def exponent(self) -> float:
        """``n + a``, the scaling exponent of the weighted surface measure."""
        return self.grid.n + self.grid.a

    def max_radius(self) -> float:
        g = self.grid
        margin = 2.0 * max(g.hx, g.hy)
        room = min(float(np.min(g.x_box - np.abs(self.center))), g.y_max) - margin
        return max(room, 0.0)

    def check_radius(self, r: float) -> None:
        if r <= 0:
            raise RadiusError("radius must be positive")
        if r > self.max_radius() + 1e-12:
            raise RadiusError(f"radius {r:.4g} exceeds the room {self.max_radius():.4g} around {self.center}")

    def with_order(self, order: int) -> "CenteredField":
        return CenteredField(self.grid, self.center, self.values, order)


def center_from(grid: ExtensionGrid, x0) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (grid.n,):
        raise DiagnosticsError(f"center must have {grid.n} coordinates")
    if np.any(np.abs(x0) >= grid.x_box):
        raise DiagnosticsError(f"center {x0} outside the grid")
    return x0


def build_v(field_: SolutionField, obstacle: ObstacleSpec, x0) -> CenteredField:
    """Recentred field ``v`` at ``x0`` (trace equals ``u - phi`` exactly)."""
    g = field_.grid
    x0 = center_from(g, x0)
    pts = g.trace_points()
    phi = obstacle.eval_phi(pts)
    lap0 = float(obstacle.eval_lap_phi(x0[None, :])[0])
    glap0 = obstacle.eval_grad_lap_phi(x0[None, :])[0]
    lin = lap0 + np.tensordot(pts - x0, glap0, axes=([-1], [0]))
    y2 = g.ys**2
    corr = lin[..., None] * y2 / (2.0 * (1.0 + g.a))
    values = field_.values - phi[..., None] + corr
    values[..., 0] = field_.values[..., 0] - phi
    values.setflags(write=False)
    return CenteredField(g, x0, values)


def centered_from_function(grid: ExtensionGrid, x0, func, order: int = 3) -> CenteredField:
    """Sample ``func(x (..., n), y)`` at the nodes, with ``x`` relative to ``x0``."""
    x0 = center_from(grid, x0)
    pts = grid.trace_points()
    xx = np.broadcast_to(pts[..., None, :], grid.shape + (grid.n,)) - x0
    yy = np.broadcast_to(grid.ys, grid.shape)
    values = np.asarray(func(xx, yy), dtype=float)
    values = np.broadcast_to(values, grid.shape).copy()
    values.setflags(write=False)
    return CenteredField(grid, x0, values, order)


# --------------------------------------------------------------------------
# quadratures
# --------------------------------------------------------------------------


def _panels(cf: CenteredField, r: float, density: float) -> int:
    return int(max(32, math.ceil(density * r / cf.grid.hx)))


def _surface_points(cf: CenteredField, r: float, density: float):
    dirs, w = sphere_rule(cf.grid.n, cf.grid.a, _panels(cf, r, density))
    x = cf.center + r * dirs[:, :-1]
    y = r * dirs[:, -1]
    return dirs, x, y, w * r**cf.exponent


def surface_integral(cf: CenteredField, r: float, integrand, density: float = 8.0) -> float:
    """``int_{dB_r} |y|^a integrand(dirs, value, grad, x, y)``."""
    cf.check_radius(r)
    dirs, x, y, w = _surface_points(cf, r, density)
    val, grad = cf.interpolator(x, y, gradient=True)
    return float(np.sum(w * integrand(dirs, val, grad, x, y)))


def surface_H(cf: CenteredField, r: float, density: float = 8.0) -> float:
    return surface_integral(cf, r, lambda d, v, g, x, y: v * v, density)


def flux_surface(cf: CenteredField, r: float, density: float = 8.0) -> float:
    """``int_{dB_r} |y|^a v v_nu``."""
    return surface_integral(cf, r, lambda d, v, g, x, y: v * np.sum(g * d, axis=-1), density)


def _bulk(cf: CenteredField, r: float, which: str, density: float, levels: int = 5, q: int = 8):
    cf.check_radius(r)
    p = cf.exponent
    rho, wr = radial_rule(p, levels, q)
    dirs, ws = sphere_rule(cf.grid.n, cf.grid.a, _panels(cf, r, density))
    rr = r * rho
    x = cf.center + rr[:, None, None] * dirs[None, :, :-1]
    y = rr[:, None] * dirs[None, :, -1]
    if which == "G":
        val = cf.interpolator(x, y)
        f = val * val
    else:
        _, grad = cf.interpolator(x, y, gradient=True)
        f = np.sum(grad * grad, axis=-1)
    # int_0^r rho^p int_S ... = r^(p+1) int_0^1 t^p ...
    return float(r ** (p + 1) * np.einsum("i,j,ij->", wr, ws, f))


def bulk_G(cf: CenteredField, r: float, density: float = 8.0) -> float:
    return _bulk(cf, r, "G", density)


def bulk_D(cf: CenteredField, r: float, density: float = 8.0) -> float:
    return _bulk(cf, r, "D", density)


def bulk_pairing(cf: CenteredField, r: float, op: DiscreteOperator | None = None) -> float:
    """``int_{B_r} v L_a v`` from the nodal flux residuals of the discrete operator."""
    cf.check_radius(r)
    g = cf.grid
    op = op if op is not None else assemble_operator(g)
    res = op.apply(cf.values)
    coords = g.node_coordinates()
    dist2 = sum((coords[k] - cf.center[k]) ** 2 for k in range(g.n)) + coords[-1] ** 2
    inside = dist2 <= r * r
    mult = np.where(op.trace_mask, 1.0, 2.0)
    return float(np.sum((cf.values * res * mult)[inside & ~op.boundary_mask]))


@dataclass(frozen=True)
class FluxPair:
    surface: float
    bulk: float

    @property
    def gap(self) -> float:
        return abs(self.surface - self.bulk)


def flux_I(cf: CenteredField, r: float, op: DiscreteOperator | None = None, density: float = 8.0) -> FluxPair:
    """``I(r)`` two ways: surface ``v v_nu`` and ``D - int v L_a v``."""
    surf = flux_surface(cf, r, density)
    bulk = bulk_D(cf, r, density) - bulk_pairing(cf, r, op)
    return FluxPair(surf, bulk)


def frequency_N(cf: CenteredField, r: float, density: float = 8.0) -> float:
    H = surface_H(cf, r, density)
    if H <= np.finfo(float).tiny * 1e6:
        raise DegenerateH(f"H({r:.4g}) = {H:.3e} is below the floor")
    return r * bulk_D(cf, r, density) / H


def weiss_value(n_plus_a: float, r: float, D: float, H: float) -> float:
    return D / r ** (n_plus_a + 3.0) - 2.0 * H / r ** (n_plus_a + 4.0)


def monneau_M(cf: CenteredField, q: QuadraticBlowup, r: float, density: float = 8.0) -> float:
    """Scaled weighted ``L^2`` distance on ``dB_r`` between ``v`` and ``p2(x - x0, y)``."""

    def integrand(d, v, g, x, y):
        return (v - eval_p2(q, x - cf.center, y)) ** 2

    return surface_integral(cf, r, integrand, density) / r ** (cf.exponent + 4.0)


def blowup_scale(cf: CenteredField, r: float, density: float = 8.0) -> float:
    """``d_r = (H(r) / r^(n+a))^(1/2)``, the normalisation of blow-up sequences."""
    return math.sqrt(surface_H(cf, r, density) / r**cf.exponent)


# --------------------------------------------------------------------------
# ladder
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsConfig:
    """``C0 = 16`` is the smallest power of two making ``Phi`` nondecreasing
    on the built-in test matrix (see :func:`fracobs.freeboundary.select_C0`)."""

    C0: float = 16.0
    gamma: float = 1.0
    r_hat: float = 0.25
    min_cells: float = 4.0
    ladder_ratio: float = 2.0
    deriv_ratio: float = 2.0**0.25
    density: float = 8.0


def radius_ladder(cf: CenteredField, cfg: DiagnosticsConfig) -> np.ndarray:
    """Geometric ladder from ``min(room, r_hat)`` down to ``min_cells * hx``."""
    top = min(cf.max_radius() / cfg.deriv_ratio, cfg.r_hat)
    floor = cfg.min_cells * cf.grid.hx
    radii = []
    r = top
    while r >= floor * (1 - 1e-9):
        radii.append(r)
        r /= cfg.ladder_ratio
    return np.array(radii)


@dataclass(frozen=True)
class RadialDiagnostics:
    """One row per ladder radius, largest radius first."""

    center: np.ndarray
    n: int
    a: float
    s: float
    radii: np.ndarray
    H: np.ndarray
    G: np.ndarray
    D: np.ndarray
    I: np.ndarray
    I_bulk: np.ndarray
    N: np.ndarray
    Phi: np.ndarray
    W: np.ndarray
    dlogH: np.ndarray
    dlogG: np.ndarray
    err_H: np.ndarray
    err_D: np.ndarray
    err_Phi: np.ndarray
    C0: float
    gamma: float

    @property
    def n_plus_a(self) -> float:
        return self.n + self.a

    @property
    def dH(self) -> np.ndarray:
        return self.H / self.radii * self.dlogH

    @property
    def dG(self) -> np.ndarray:
        return self.G / self.radii * self.dlogG

    def d_r(self) -> np.ndarray:
        return np.sqrt(self.H / self.radii**self.n_plus_a)

    def h_prime_defect(self) -> np.ndarray:
        """Relative defect of ``H' = (n+a) H / r + 2 I``."""
        rhs = self.n_plus_a * self.H / self.radii + 2.0 * self.I
        return np.abs(self.dH - rhs) / np.abs(self.dH)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "H", "G", "D", "I", "I_bulk", "N", "Phi", "W", "err_H", "err_D", "err_Phi"])
        for k in range(len(self.radii)):
            w.writerow(
                [
                    repr(float(v))
                    for v in (
                        self.radii[k],
                        self.H[k],
                        self.G[k],
                        self.D[k],
                        self.I[k],
                        self.I_bulk[k],
                        self.N[k],
                        self.Phi[k],
                        self.W[k],
                        self.err_H[k],
                        self.err_D[k],
                        self.err_Phi[k],
                    )
                ]
            )
        return buf.getvalue()


def _log_slope(fm, fp, q):
    return (math.log(fp) - math.log(fm)) / (2.0 * math.log(q))


def phi_value(r, H_minus, H_plus, q, n_plus_a, C0, gamma):
    """Truncated frequency from ``H`` at ``r/q`` and ``r q``.

    On the power branch the value is exactly ``(1 + C0 r)(n+a+4+2 gamma)``.
    """
    P = n_plus_a + 4.0 + 2.0 * gamma
    lo, hi = max(H_minus, (r / q) ** P), max(H_plus, (r * q) ** P)
    if H_minus <= (r / q) ** P and H_plus <= (r * q) ** P:
        return (1.0 + C0 * r) * P
    return (1.0 + C0 * r) * _log_slope(lo, hi, q)


def truncated_Phi(diag: RadialDiagnostics, r: float) -> float:
    """Look up ``Phi`` at a ladder radius."""
    k = int(np.argmin(np.abs(diag.radii - r)))
    if not np.isclose(diag.radii[k], r, rtol=1e-9):
        raise DiagnosticsError("r is not a ladder radius")
    if len(diag.radii) < 3:
        raise DiagnosticsError("at least three ladder radii are required")
    return float(diag.Phi[k])


def weiss_W(diag: RadialDiagnostics, r: float) -> float:
    k = int(np.argmin(np.abs(diag.radii - r)))
    return float(diag.W[k])


def radial_diagnostics(
    cf: CenteredField,
    cfg: DiagnosticsConfig = DiagnosticsConfig(),
    radii=None,
    op: DiscreteOperator | None = None,
) -> RadialDiagnostics:
    """Evaluate every radial functional on the ladder."""
    g = cf.grid
    radii = radius_ladder(cf, cfg) if radii is None else np.asarray(radii, dtype=float)
    op = op if op is not None else assemble_operator(g)
    na = cf.exponent
    q = cfg.deriv_ratio
    dens = cfg.density
    coarse = cf.with_order(1)
    rows = []
    for r in radii:
        H = surface_H(cf, r, dens)
        Hm, Hp = surface_H(cf, r / q, dens), surface_H(cf, r * q, dens)
        G = bulk_G(cf, r, dens)
        Gm, Gp = bulk_G(cf, r / q, dens), bulk_G(cf, r * q, dens)
        D = bulk_D(cf, r, dens)
        I = flux_surface(cf, r, dens)
        Ib = D - bulk_pairing(cf, r, op)
        N = r * D / H if H > 0 else np.nan
        Phi = phi_value(r, Hm, Hp, q, na, cfg.C0, cfg.gamma)
        W = weiss_value(na, r, D, H)
        dlogH = _log_slope(Hm, Hp, q) if Hm > 0 and Hp > 0 else np.nan
        dlogG = _log_slope(Gm, Gp, q) if Gm > 0 and Gp > 0 else np.nan
        # error estimates: halve the angular density and drop to linear interpolation
        eH = abs(surface_H(coarse, r, dens / 2) - H)
        eD = abs(bulk_D(coarse, r, dens / 2) - D)
        eHm = abs(surface_H(coarse, r / q, dens / 2) - Hm)
        eHp = abs(surface_H(coarse, r * q, dens / 2) - Hp)
        ePhi = (1.0 + cfg.C0 * r) * (eHm / max(Hm, 1e-300) + eHp / max(Hp, 1e-300)) / (2.0 * math.log(q))
        rows.append((H, G, D, I, Ib, N, Phi, W, dlogH, dlogG, eH, eD, ePhi))
    arr = np.array(rows, dtype=float).reshape(len(radii), 13)
    return RadialDiagnostics(
        center=cf.center,
        n=g.n,
        a=g.a,
        s=g.s,
        radii=np.asarray(radii),
        H=arr[:, 0],
        G=arr[:, 1],
        D=arr[:, 2],
        I=arr[:, 3],
        I_bulk=arr[:, 4],
        N=arr[:, 5],
        Phi=arr[:, 6],
        W=arr[:, 7],
        dlogH=arr[:, 8],
        dlogG=arr[:, 9],
        err_H=arr[:, 10],
        err_D=arr[:, 11],
        err_Phi=arr[:, 12],
        C0=cfg.C0,
        gamma=cfg.gamma,
    )


# --------------------------------------------------------------------------
# extrapolation and non-degeneracy
# --------------------------------------------------------------------------


def richardson_limit(radii, values, rate: float = 1.0, use: int = 2) -> float:
    """Limit at ``r -> 0`` assuming ``f(r) = f0 + c r^rate``, from the ``use``
    smallest radii (least squares when ``use > 2``)."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    radii, values = radii[ok], values[ok]
    if len(radii) == 0:
        return float("nan")
    if len(radii) == 1:
        return float(values[0])
    order = np.argsort(radii)[:use]
    X = np.stack([np.ones(len(order)), radii[order] ** rate], axis=1)
    coef, *_ = np.linalg.lstsq(X, values[order], rcond=None)
    return float(coef[0])


@dataclass(frozen=True)
class NondegeneracyReport:
    radii: np.ndarray
    sup_ratio: np.ndarray
    G_ratio: np.ndarray
    c1_hat: float
    c2_hat: float
    c1_spread: float
    c2_spread: float
    passed: bool
    unresolved: bool = False


def nondegeneracy_scan(
    field_: SolutionField,
    obstacle: ObstacleSpec,
    x0,
    r_ladder,
    threshold: float = 1e-8,
    min_cells: float = 4.0,
    cf: CenteredField | None = None,
) -> NondegeneracyReport:
    """Lower constants for ``sup_{B_r}(u - phi) / r^2`` and ``G(r) / r^(n+a+5)``."""
    g = field_.grid
    x0 = center_from(g, x0)
    pts = g.trace_points()
    gap = field_.trace - obstacle.eval_phi(pts)
    if not np.any(gap <= max(1e-9, 1e-6 * obstacle.positive_part_sup())):
        raise DiagnosticsError("no contact set: the scan needs a free boundary point")
    radii = np.asarray(r_ladder, dtype=float)
    unresolved = bool(np.any(radii < min_cells * g.hx * (1 - 1e-9)))
    radii = radii[radii >= min_cells * g.hx * (1 - 1e-9)]
    cf = cf if cf is not None else build_v(field_, obstacle, x0)
    dist = np.sqrt(np.sum((pts - x0) ** 2, axis=-1))
    sup_ratio, G_ratio = [], []
    for r in radii:
        sup_ratio.append(float(gap[dist < r].max()) / r**2)
        G_ratio.append(bulk_G(cf, r) / r ** (g.n + g.a + 5.0))
    sup_ratio = np.array(sup_ratio)
    G_ratio = np.array(G_ratio)
    if len(radii) == 0:
        return NondegeneracyReport(radii, sup_ratio, G_ratio, np.nan, np.nan, np.nan, np.nan, False, True)
    c1, c2 = float(sup_ratio.min()), float(G_ratio.min())
    return NondegeneracyReport(
        radii,
        sup_ratio,
        G_ratio,
        c1,
        c2,
        float(sup_ratio.max() / c1) if c1 > 0 else np.inf,
        float(G_ratio.max() / c2) if c2 > 0 else np.inf,
        bool(c1 > threshold and c2 > threshold),
        unresolved,
    )
