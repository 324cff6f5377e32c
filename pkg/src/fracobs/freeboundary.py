"""Contact sets, free boundary points and their classification.

A free boundary node is a contact node with a non-contact trace neighbour.
Each one is recentred at a sub-grid estimate of the true free boundary
location, its radial diagnostics are evaluated on the dyadic ladder and the
homogeneity ``m`` is extrapolated from the Almgren quotient.  Points with
``m`` near ``1 + s`` are regular, points with ``m`` near 2 singular; anything
else is reported as unresolved rather than rounded.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .diagnostics import (
    CenteredField,
    DiagnosticsConfig,
    NondegeneracyReport,
    RadialDiagnostics,
    build_v,
    monneau_M,
    nondegeneracy_scan,
    radial_diagnostics,
    richardson_limit,
)
from .domain import ObstacleSpec, QuadraticBlowup, SolutionField, eval_p2
from .lcp import DiscreteOperator, SolverConfig, assemble_operator, solve_obstacle
from .quadrature import sphere_rule

SCHEMA_VERSION = 1

REGULAR = "Regular"
SINGULAR = "Singular"
UNRESOLVED = "Unresolved"


class FreeBoundaryError(ValueError):
    pass


class SchemaError(FreeBoundaryError):
    """A serialized report has an unknown schema version."""


@dataclass(frozen=True)
class FreeBoundaryConfig:
    class_tol: float = 0.15
    contact_tol: float | None = None
    kernel_tol: float = 1e-3
    min_resolved: int = 4
    richardson_use: int = 2
    edge_samples: int = 6


@dataclass(frozen=True)
class ContactMasks:
    contact: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    contact_tol: float = 0.0

    def boundary_indices(self) -> list[tuple[int, ...]]:
        return [tuple(int(i) for i in idx) for idx in np.argwhere(self.boundary)]


def default_contact_tol(obstacle: ObstacleSpec, solver_tol: float = SolverConfig.tol) -> float:
    """Ten times the solver tolerance, in the same units (relative to ``sup phi+``)."""
    scale = obstacle.positive_part_sup() or 1.0
    return 10.0 * solver_tol * scale


def _neighbour_offsets(n: int):
    return [off for off in itertools.product((-1, 0, 1), repeat=n) if any(off)]


def extract_contact_and_boundary(
    field_: SolutionField, obstacle: ObstacleSpec, contact_tol: float | None = None
) -> ContactMasks:
    """Contact nodes ``u - phi <= contact_tol`` and those with a non-contact neighbour."""
    g = field_.grid
    tol = default_contact_tol(obstacle) if contact_tol is None else float(contact_tol)
    gap = field_.trace - obstacle.eval_phi(g.trace_points())
    contact = gap <= tol
    padded = np.pad(contact, 1, mode="constant", constant_values=True)
    boundary = np.zeros_like(contact)
    for off in _neighbour_offsets(g.n):
        if sum(abs(o) for o in off) != 1:
            continue
        shifted = tuple(slice(1 + o, padded.shape[k] - 1 + o) for k, o in enumerate(off))
        boundary |= contact & ~padded[shifted]
    for arr in (contact, boundary):
        arr.setflags(write=False)
    return ContactMasks(contact, boundary, tol)


def density_ratio(masks: ContactMasks, grid, x0, r: float) -> float:
    """Fraction of contact nodes among the trace nodes of ``B_r(x0)``."""
    if r < 2.0 * grid.hx * (1 - 1e-9):
        raise FreeBoundaryError("density needs r >= 2 hx")
    pts = grid.trace_points()
    dist = np.sqrt(np.sum((pts - np.asarray(x0, dtype=float)) ** 2, axis=-1))
    inside = dist <= r
    return float(np.count_nonzero(masks.contact & inside) / max(np.count_nonzero(inside), 1))


# --------------------------------------------------------------------------
# locating the free boundary below grid resolution
# --------------------------------------------------------------------------


def _gap_interpolator(field_: SolutionField, obstacle: ObstacleSpec):
    g = field_.grid
    gap = field_.trace - obstacle.eval_phi(g.trace_points())
    axes = (g.xs,) * g.n
    return gap, RegularGridInterpolator(axes, gap, method="linear", bounds_error=False, fill_value=None)


def locate_center(
    field_: SolutionField,
    obstacle: ObstacleSpec,
    masks: ContactMasks,
    index: tuple[int, ...],
    s: float,
    samples: int = 6,
) -> tuple[np.ndarray, str]:
    """Sub-grid estimate of the free boundary point attached to a boundary node.

    At an edge of the contact set the gap grows like ``t^(1+s)`` along the
    outward normal ``t``, so ``gap^(1/(1+s))`` is fitted by a line whose root
    is the edge.  At an isolated contact node the vertex of a local quadratic
    fit is used.  Both estimates are clipped to one cell around the node.
    """
    g = field_.grid
    x_node = g.trace_points()[index]
    gap, interp = _gap_interpolator(field_, obstacle)
    normal = np.zeros(g.n)
    for off in _neighbour_offsets(g.n):
        nb = tuple(i + o for i, o in zip(index, off))
        if all(0 <= j < g.nx for j in nb) and not masks.contact[nb]:
            normal += np.asarray(off, dtype=float)
    has_contact_nb = False
    for off in _neighbour_offsets(g.n):
        nb = tuple(i + o for i, o in zip(index, off))
        if all(0 <= j < g.nx for j in nb) and masks.contact[nb]:
            has_contact_nb = True
            break
    if has_contact_nb and np.linalg.norm(normal) > 0:
        normal /= np.linalg.norm(normal)
        t = np.arange(1, samples + 1, dtype=float) * g.hx
        pts = x_node + t[:, None] * normal
        vals = np.maximum(interp(pts), 0.0) ** (1.0 / (1.0 + s))
        slope, icpt = np.polyfit(t, vals, 1)
        if slope <= 0:
            return x_node, "node"
        t0 = float(np.clip(-icpt / slope, -g.hx, g.hx))
        return x_node + t0 * normal, "edge"
    # isolated contact node: quadratic vertex on the 5^n patch
    lo = [max(i - 2, 0) for i in index]
    hi = [min(i + 3, g.nx) for i in index]
    patch = tuple(slice(a, b) for a, b in zip(lo, hi))
    pts = g.trace_points()[patch].reshape(-1, g.n) - x_node
    vals = gap[patch].ravel()
    cols = [np.ones(len(vals))] + [pts[:, k] for k in range(g.n)]
    pairs = [(i, j) for i in range(g.n) for j in range(i, g.n)]
    cols += [pts[:, i] * pts[:, j] for i, j in pairs]
    coef, *_ = np.linalg.lstsq(np.stack(cols, axis=1), vals, rcond=None)
    grad = coef[1 : 1 + g.n]
    hess = np.zeros((g.n, g.n))
    for c, (i, j) in zip(coef[1 + g.n :], pairs):
        if i == j:
            hess[i, i] = 2.0 * c
        else:
            hess[i, j] = hess[j, i] = c
    if np.all(np.linalg.eigvalsh(hess) > 0):
        shift = -np.linalg.solve(hess, grad)
        if np.all(np.abs(shift) <= g.hx):
            return x_node + shift, "vertex"
    return x_node, "node"


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Classification:
    m_hat: float
    phi_limit: float
    m_from_phi: float
    label: str
    reason: str = ""


def classify(
    diag: RadialDiagnostics,
    cfg: FreeBoundaryConfig = FreeBoundaryConfig(),
    density_trend=None,
) -> Classification:
    """Homogeneity from the extrapolated Almgren quotient and its class.

    ``density_trend`` is the contact density along the ladder (largest radius
    first).  A singular verdict needs it to decay toward 0 as ``r`` grows and
    to stay below the half-space value 1/2.  On a fixed grid an isolated
    contact node has density about ``hx / 2r``, so the decay is observed
    with increasing radius.
    """
    ok = np.isfinite(diag.N)
    phi_limit = richardson_limit(diag.radii, diag.Phi, use=cfg.richardson_use)
    m_phi = (phi_limit - diag.n_plus_a) / 2.0
    if np.count_nonzero(ok) < cfg.min_resolved:
        return Classification(float("nan"), phi_limit, m_phi, UNRESOLVED, "fewer resolved radii than required")
    m_hat = richardson_limit(diag.radii, diag.N, use=cfg.richardson_use)
    targets = {REGULAR: 1.0 + diag.s, SINGULAR: 2.0}
    dist = {k: abs(m_hat - v) for k, v in targets.items()}
    label = min(dist, key=dist.get)
    if dist[label] > cfg.class_tol:
        return Classification(m_hat, phi_limit, m_phi, UNRESOLVED, "homogeneity between the admissible values")
    if abs(targets[REGULAR] - targets[SINGULAR]) <= cfg.class_tol:
        return Classification(m_hat, phi_limit, m_phi, UNRESOLVED, "1+s and 2 closer than class_tol; refine the grid")
    if label == SINGULAR and density_trend is not None:
        dens = np.asarray(density_trend, dtype=float)
        decaying = bool(np.all(np.diff(dens) >= -1e-12)) if len(dens) > 1 else True
        if not decaying or dens[-1] >= 0.5:
            return Classification(m_hat, phi_limit, m_phi, UNRESOLVED, "contact density does not decay")
    return Classification(m_hat, phi_limit, m_phi, label)


@dataclass(frozen=True)
class P2Fit:
    blowup: QuadraticBlowup
    residual: float
    r_fit: float
    inner: float

    @property
    def A(self) -> np.ndarray:
        return self.blowup.A


def fit_p2(cf: CenteredField, r_fit: float) -> P2Fit:
    """Least-squares ``<A x, x>`` on the trace annulus ``r_fit/2 <= |x - x0| <= r_fit``.

    ``A`` is symmetrized and projected on the PSD cone.  The residual is
    ``max |v - <A x, x>| / |x - x0|^2`` over the punctured ball of radius
    ``r_fit``, an estimate of the modulus ``omega(r_fit)`` in
    ``u - phi = <A x, x> + omega(|x - x0|) |x - x0|^2``.
    """
    g = cf.grid
    pts = g.trace_points().reshape(-1, g.n) - cf.center
    vals = cf.values[..., 0].ravel()
    dist = np.sqrt(np.sum(pts**2, axis=-1))
    pairs = [(i, j) for i in range(g.n) for j in range(i, g.n)]
    for inner in (0.5 * r_fit, 0.25 * r_fit):
        sel = (dist >= inner) & (dist <= r_fit)
        X = np.stack([pts[sel, i] * pts[sel, j] * (1.0 if i == j else 2.0) for i, j in pairs], axis=1)
        if X.shape[0] >= len(pairs) and np.linalg.matrix_rank(X) == len(pairs):
            break
    else:
        raise FreeBoundaryError("annulus too thin for a quadratic fit")
    coef, *_ = np.linalg.lstsq(X, vals[sel], rcond=None)
    A = np.zeros((g.n, g.n))
    for c, (i, j) in zip(coef, pairs):
        A[i, j] = A[j, i] = c
    w, V = np.linalg.eigh(A)
    A = (V * np.maximum(w, 0.0)) @ V.T
    q = QuadraticBlowup.from_matrix(A, g.a)
    ball = (dist > 0.5 * g.hx) & (dist <= r_fit)
    fitted = np.einsum("ki,ij,kj->k", pts[ball], A, pts[ball])
    resid = float(np.max(np.abs(vals[ball] - fitted) / dist[ball] ** 2))
    return P2Fit(q, resid, float(r_fit), float(inner))


def p2_distance(q1: QuadraticBlowup, q2: QuadraticBlowup, a: float, panels: int = 64) -> float:
    """``(int_{dB_1} |y|^a (p - q)^2)^(1/2)``."""
    n = q1.A.shape[0]
    dirs, w = sphere_rule(n, a, panels)
    diff = eval_p2(q1, dirs[:, :-1], dirs[:, -1]) - eval_p2(q2, dirs[:, :-1], dirs[:, -1])
    return math.sqrt(float(np.sum(w * diff * diff)))


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FreeBoundaryPoint:
    point_id: int
    node: tuple[int, ...]
    location: tuple[float, ...]
    locator: str
    phi_limit: float
    m_hat: float
    m_from_phi: float
    label: str
    reason: str
    density_ratio: float
    density_trend: tuple[float, ...]
    p2_A: tuple[tuple[float, ...], ...] | None = None
    p2_b: float | None = None
    p2_residual: float | None = None
    stratum: int | None = None
    stratum_flag: str = ""
    c1_hat: float = float("nan")
    c2_hat: float = float("nan")
    c1_spread: float = float("nan")
    c2_spread: float = float("nan")

    def blowup(self) -> QuadraticBlowup | None:
        if self.p2_A is None:
            return None
        return QuadraticBlowup(np.array(self.p2_A), float(self.p2_b))


@dataclass(frozen=True)
class ContinuityRow:
    i: int
    j: int
    separation: float
    distance: float
    envelope: float


@dataclass
class FreeBoundaryReport:
    n: int
    s: float
    points: list[FreeBoundaryPoint]
    contact_mask: np.ndarray
    C0: float
    class_tol: float
    continuity: list[ContinuityRow] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict, repr=False)
    schema_version: int = SCHEMA_VERSION

    def counts(self) -> dict:
        out = {REGULAR: 0, SINGULAR: 0, UNRESOLVED: 0}
        for p in self.points:
            out[p.label] += 1
        strata: dict[str, int] = {}
        for p in self.points:
            if p.stratum is not None:
                strata[str(p.stratum)] = strata.get(str(p.stratum), 0) + 1
        return {"classes": out, "strata": strata}

    def unresolved_fraction(self) -> float:
        return self.counts()["classes"][UNRESOLVED] / len(self.points) if self.points else 0.0

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "n": self.n,
            "s": self.s,
            "C0": self.C0,
            "class_tol": self.class_tol,
            "summary": self.counts(),
            "points": [asdict(p) for p in self.points],
            "continuity": [asdict(c) for c in self.continuity],
            "contact_mask": {
                "shape": list(self.contact_mask.shape),
                "indices": np.argwhere(self.contact_mask).tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FreeBoundaryReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported report schema {d.get('schema_version')!r}")
        mask = np.zeros(tuple(d["contact_mask"]["shape"]), dtype=bool)
        for idx in d["contact_mask"]["indices"]:
            mask[tuple(idx)] = True
        points = []
        for p in d["points"]:
            p = dict(p)
            p["node"] = tuple(p["node"])
            p["location"] = tuple(p["location"])
            p["density_trend"] = tuple(p["density_trend"])
            if p.get("p2_A") is not None:
                p["p2_A"] = tuple(tuple(row) for row in p["p2_A"])
            points.append(FreeBoundaryPoint(**p))
        cont = [ContinuityRow(**c) for c in d.get("continuity", [])]
        return cls(d["n"], d["s"], points, mask, d["C0"], d["class_tol"], cont)

    @classmethod
    def from_json(cls, text: str) -> "FreeBoundaryReport":
        return cls.from_dict(json.loads(text))


def continuity_check(report: FreeBoundaryReport, a: float | None = None) -> list[ContinuityRow]:
    """Pairwise distances of fitted blow-ups against point separation.

    The envelope column is the running maximum of the distance over all
    pairs with separation at most the row's separation.
    """
    a = 1.0 - 2.0 * report.s if a is None else a
    sing = [p for p in report.points if p.blowup() is not None]
    if len(sing) < 2:
        return []
    rows = []
    for p, q in itertools.combinations(sing, 2):
        sep = math.dist(p.location, q.location)
        rows.append((p.point_id, q.point_id, sep, p2_distance(p.blowup(), q.blowup(), a)))
    rows.sort(key=lambda t: (t[2], t[0], t[1]))
    env = np.maximum.accumulate([r[3] for r in rows])
    return [ContinuityRow(i, j, sep, dist, float(e)) for (i, j, sep, dist), e in zip(rows, env)]


def stratum_of(A: np.ndarray, kernel_tol: float) -> tuple[int | None, str]:
    w = np.linalg.eigvalsh(np.asarray(A, dtype=float))
    top = float(w.max(initial=0.0))
    if top <= np.finfo(float).eps:
        return None, "A vanishes: not a member of the blow-up class"
    return int(np.count_nonzero(w < kernel_tol * top)), ""


def stratify(report: FreeBoundaryReport, kernel_tol: float = 1e-3) -> FreeBoundaryReport:
    """Kernel dimension of the fitted ``A`` at every singular point."""
    pts = []
    for p in report.points:
        if p.p2_A is not None:
            k, flag = stratum_of(np.array(p.p2_A), kernel_tol)
            p = replace(p, stratum=k, stratum_flag=flag)
        pts.append(p)
    report.points = pts
    return report


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def fit_radius(diag: RadialDiagnostics) -> float:
    """Fit annulus radius: the second smallest ladder radius."""
    radii = np.sort(diag.radii)
    return float(radii[1] if len(radii) > 1 else radii[0])


def analyze_free_boundary(
    field_: SolutionField,
    obstacle: ObstacleSpec,
    op: DiscreteOperator | None = None,
    diag_cfg: DiagnosticsConfig = DiagnosticsConfig(),
    cfg: FreeBoundaryConfig = FreeBoundaryConfig(),
) -> FreeBoundaryReport:
    """Detect, diagnose, classify and stratify every free boundary node."""
    g = field_.grid
    op = op if op is not None else assemble_operator(g)
    masks = extract_contact_and_boundary(field_, obstacle, cfg.contact_tol)
    points: list[FreeBoundaryPoint] = []
    diags: dict[int, RadialDiagnostics] = {}
    for pid, idx in enumerate(masks.boundary_indices()):
        center, how = locate_center(field_, obstacle, masks, idx, g.s, cfg.edge_samples)
        cf = build_v(field_, obstacle, center)
        diag = radial_diagnostics(cf, diag_cfg, op=op)
        diags[pid] = diag
        trend = tuple(density_ratio(masks, g, center, r) for r in diag.radii if r >= 2 * g.hx)
        cls = classify(diag, cfg, trend)
        nd: NondegeneracyReport = nondegeneracy_scan(field_, obstacle, center, diag.radii, cf=cf)
        extra = {}
        if cls.label == SINGULAR:
            fit = fit_p2(cf, fit_radius(diag))
            extra = {
                "p2_A": tuple(tuple(float(v) for v in row) for row in fit.A),
                "p2_b": float(fit.blowup.b),
                "p2_residual": fit.residual,
            }
        points.append(
            FreeBoundaryPoint(
                point_id=pid,
                node=idx,
                location=tuple(float(c) for c in center),
                locator=how,
                phi_limit=cls.phi_limit,
                m_hat=cls.m_hat,
                m_from_phi=cls.m_from_phi,
                label=cls.label,
                reason=cls.reason,
                density_ratio=trend[-1] if trend else float("nan"),
                density_trend=trend,
                c1_hat=nd.c1_hat,
                c2_hat=nd.c2_hat,
                c1_spread=nd.c1_spread,
                c2_spread=nd.c2_spread,
                **extra,
            )
        )
    report = FreeBoundaryReport(g.n, g.s, points, np.array(masks.contact), diag_cfg.C0, cfg.class_tol)
    report.diagnostics = diags
    stratify(report, cfg.kernel_tol)
    report.continuity = continuity_check(report, g.a)
    return report


# --------------------------------------------------------------------------
# monotonicity suites on a diagnostics table
# --------------------------------------------------------------------------


def rescale_C0(diag: RadialDiagnostics, C0: float) -> tuple[np.ndarray, np.ndarray]:
    """``Phi`` and its error estimate for another ``C0`` (the factor ``1 + C0 r`` is explicit)."""
    f = (1.0 + C0 * diag.radii) / (1.0 + diag.C0 * diag.radii)
    return diag.Phi * f, diag.err_Phi * f


def phi_monotone(diag: RadialDiagnostics, C0: float | None = None, slack: float = 3.0) -> bool:
    """``Phi(r_k)`` nondecreasing in ``r`` up to ``slack`` error estimates."""
    Phi, err = rescale_C0(diag, diag.C0 if C0 is None else C0)
    order = np.argsort(diag.radii)
    P, E = Phi[order], err[order]
    return bool(np.all(P[1:] >= P[:-1] - slack * np.maximum(E[1:], E[:-1])))


C0_CANDIDATES = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def select_C0(diags, candidates=C0_CANDIDATES) -> float | None:
    """Smallest candidate making ``Phi`` nondecreasing on every table, or None."""
    diags = list(diags)
    for c in candidates:
        if all(phi_monotone(d, c) for d in diags):
            return float(c)
    return None


def weiss_constant(diag: RadialDiagnostics) -> float:
    """Smallest ``C_W`` with ``W(r) >= -C_W r^gamma`` on the ladder."""
    return float(max(0.0, np.max(-diag.W / diag.radii**diag.gamma)))


def monneau_series(cf: CenteredField, q: QuadraticBlowup, radii) -> np.ndarray:
    return np.array([monneau_M(cf, q, float(r)) for r in radii])


def monneau_descends(M, threshold: float) -> bool:
    """``M`` (largest radius first) is nonincreasing until it falls below
    ``threshold`` and stays below it afterwards."""
    M = np.asarray(M, dtype=float)
    below = np.nonzero(M <= threshold)[0]
    if len(below) == 0:
        return False
    k = int(below[0])
    return bool(np.all(np.diff(M[: k + 1]) <= 0) and np.all(M[k:] <= threshold))


def monneau_constant(radii, M, gamma: float = 1.0) -> float:
    """Smallest ``C_M`` with ``M(r_{k+1}) - M(r_k) <= (C_M / gamma)(r_k^gamma - r_{k+1}^gamma)``,
    radii sorted decreasingly: the integrated form of ``M' >= -C_M r^(gamma-1)``."""
    radii = np.asarray(radii, dtype=float)
    M = np.asarray(M, dtype=float)
    order = np.argsort(-radii)
    r, m = radii[order], M[order]
    rise = m[1:] - m[:-1]
    span = (r[:-1] ** gamma - r[1:] ** gamma) / gamma
    return float(max(0.0, np.max(rise / span))) if len(r) > 1 else 0.0


# --------------------------------------------------------------------------
# near-singular geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Bracket:
    below: float
    above: float
    gap_below: float
    evaluations: int

    @property
    def width(self) -> float:
        return self.above - self.below


def critical_height(
    make_obstacle,
    op: DiscreteOperator,
    region,
    lo: float,
    hi: float,
    cfg: SolverConfig = SolverConfig(),
    touch_tol: float | None = None,
    rtol: float = 1e-9,
    max_evals: int = 60,
) -> tuple[Bracket, SolutionField]:
    """Bisection for the height where a cap starts touching the solution.

    ``make_obstacle(h)`` builds the obstacle, ``region`` is a boolean trace
    mask around the tuned cap.  Below the critical height the solution does
    not see the cap, so ``h + min gap`` predicts the critical value; the
    prediction is tried first and plain bisection takes over whenever it
    fails to shrink the bracket.  Returns the bracket and the solve at its
    upper end (the touching configuration).
    """
    region = np.asarray(region, dtype=bool)
    evals = 0
    cache: dict[float, tuple[float, SolutionField]] = {}
    warm = None

    def probe(h):
        nonlocal evals, warm
        if h in cache:
            return cache[h]
        ob = make_obstacle(h)
        f = solve_obstacle(op, ob, cfg, initial=warm)
        warm = f.values
        evals += 1
        gap = f.trace - ob.eval_phi(op.grid.trace_points())
        cache[h] = (float(gap[region].min()), f)
        return cache[h]

    def touching(h, gmin):
        tol = touch_tol if touch_tol is not None else default_contact_tol(make_obstacle(h), cfg.tol)
        return gmin <= tol

    g_lo, _ = probe(lo)
    if touching(lo, g_lo):
        raise FreeBoundaryError("lower height already touches")
    g_hi, f_hi = probe(hi)
    if not touching(hi, g_hi):
        raise FreeBoundaryError("upper height does not touch")
    while hi - lo > rtol * max(abs(hi), 1.0) and evals < max_evals:
        guess = lo + g_lo
        mid = guess if lo < guess < hi else 0.5 * (lo + hi)
        g_mid, f_mid = probe(mid)
        if touching(mid, g_mid):
            hi, f_hi = mid, f_mid
            # the prediction from below may land exactly on the critical value
            below = max(lo, mid - rtol * max(abs(mid), 1.0))
            g_b, _ = probe(below)
            if touching(below, g_b):
                hi, f_hi = below, cache[below][1]
            else:
                lo, g_lo = below, g_b
        else:
            lo, g_lo = mid, g_mid
    return Bracket(lo, hi, g_lo, evals), f_hi
