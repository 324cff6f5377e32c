"""Extension grids, obstacles, solution fields and quadratic blow-up profiles.

Everything here is immutable once built.  Arrays are laid out with the
spatial axes first and the extension variable ``y`` last, so a field on an
``n = 1`` grid has shape ``(nx, ny)`` and on an ``n = 2`` grid
``(nx, nx, ny)``.  Only the upper half ``y >= 0`` is stored; the lower half
is the even reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp


class GridError(ValueError):
    """Invalid grid parameters."""


class ObstacleError(ValueError):
    """Obstacle parameters violate the admissibility conditions."""


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------


def weight_moment(y0, y1, p):
    """Return the integral of ``t**p`` over ``[y0, y1]`` (``0 <= y0``, ``p > -1``)."""
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    if abs(p + 1.0) < 1e-15:
        raise ValueError("p = -1 is not integrable at the origin")
    return (y1 ** (p + 1.0) - y0 ** (p + 1.0)) / (p + 1.0)


@dataclass(frozen=True)
class ExtensionGrid:
    """Tensor grid on ``[-x_box, x_box]^n x [0, y_max]``.

    ``y_transmissibility[j]`` is the exact steady-flux coefficient between the
    node layers ``j`` and ``j+1`` per unit face area, ``1 / int t^{-a} dt``.
    ``x_weight[j]`` is the integral of ``t^a`` over the dual cell of layer
    ``j`` (half cell at the trace ``j = 0`` and at the top layer).
    """

    n: int
    s: float
    x_box: float
    y_max: float
    nx: int
    ny: int
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    y_transmissibility: np.ndarray = field(repr=False)
    x_weight: np.ndarray = field(repr=False)

    @property
    def a(self) -> float:
        return 1.0 - 2.0 * self.s

    @property
    def hx(self) -> float:
        return 2.0 * self.x_box / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.y_max / (self.ny - 1)

    @property
    def face_transmissibility(self) -> np.ndarray:
        """y-direction flux coefficients ``1 / int t^(-a)`` per cell."""
        return self.y_transmissibility

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.n + (self.ny,)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def trace_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.n

    def trace_points(self) -> np.ndarray:
        """Spatial coordinates of the trace nodes, shape ``trace_shape + (n,)``."""
        mesh = np.meshgrid(*([self.xs] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays ``(x_1, ..., x_n, y)`` over the grid."""
        return tuple(np.meshgrid(*([self.xs] * self.n), self.ys, indexing="ij"))

    def nearest_trace_index(self, x0) -> tuple[int, ...]:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if x0.shape != (self.n,):
            raise GridError(f"center must have {self.n} coordinates")
        if np.any(np.abs(x0) > self.x_box + 1e-12):
            raise GridError(f"center {x0} outside the x-box")
        idx = np.rint((x0 + self.x_box) / self.hx).astype(int)
        return tuple(int(i) for i in idx)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "s": self.s,
            "x_box": self.x_box,
            "y_max": self.y_max,
            "nx": self.nx,
            "ny": self.ny,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtensionGrid":
        return build_grid(d["n"], d["s"], d["x_box"], d["y_max"], d["nx"], d["ny"])


def build_grid(n: int, s: float, x_box: float, y_max: float, nx: int, ny: int) -> ExtensionGrid:
    """Build the extension grid and its weighted flux coefficients."""
    if n not in (1, 2):
        raise GridError("only n = 1 and n = 2 are supported")
    if not 0.0 < s < 1.0:
        raise GridError(f"s must lie in (0, 1), got {s}")
    if not (x_box > 0 and y_max > 0):
        raise GridError("box extents must be positive")
    for name, count in (("nx", nx), ("ny", ny)):
        if count < 9 or count % 2 == 0:
            raise GridError(f"{name} must be odd and >= 9, got {count}")
    a = 1.0 - 2.0 * s
    xs = np.linspace(-x_box, x_box, nx)
    ys = np.linspace(0.0, y_max, ny)
    xs[nx // 2] = 0.0
    # 1 / int_{y_j}^{y_{j+1}} t^{-a} dt, finite because a < 1
    ty = 1.0 / weight_moment(ys[:-1], ys[1:], -a)
    hy = ys[1] - ys[0]
    lo = np.maximum(ys - hy / 2, 0.0)
    hi = np.minimum(ys + hy / 2, y_max)
    wx = weight_moment(lo, hi, a)
    for arr in (xs, ys, ty, wx):
        arr.setflags(write=False)
    return ExtensionGrid(n, float(s), float(x_box), float(y_max), int(nx), int(ny), xs, ys, ty, wx)


# --------------------------------------------------------------------------
# obstacles
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _blend_profile():
    """Radial profile derivatives on the blend annulus, compiled once.

    The profile is ``g(r) = chi(r) * (h0 - floor - kappa r^2)`` with ``chi`` the
    C-infinity step going from 1 at ``r = rho`` to 0 at ``r = rho + w``.
    """
    r, rho, w, h0, kappa, floor = sp.symbols("r rho w h0 kappa floor", real=True)
    t = (r - rho) / w
    f = lambda z: sp.exp(-1 / z)  # noqa: E731
    chi = f(1 - t) / (f(t) + f(1 - t))
    g = chi * (h0 - floor - kappa * r**2)
    derivs = [g]
    for _ in range(3):
        derivs.append(sp.diff(derivs[-1], r))
    args = (r, rho, w, h0, kappa, floor)
    return [sp.lambdify(args, d, modules="numpy") for d in derivs]


@dataclass(frozen=True)
class Cap:
    """A concave quadratic cap ``h0 - kappa |x - center|^2`` cut off beyond ``rho``."""

    center: tuple[float, ...]
    h0: float
    kappa: float
    rho: float
    blend_width: float

    @property
    def positive_radius(self) -> float:
        return math.sqrt(self.h0 / self.kappa)

    @property
    def outer_radius(self) -> float:
        return self.rho + self.blend_width


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle with analytic evaluators.

    The evaluators take points of shape ``(..., n)`` and return arrays of
    shape ``(...)`` (scalar fields) or ``(..., n)`` (gradients).
    """

    n: int
    eval_phi: Callable[[np.ndarray], np.ndarray]
    eval_grad_phi: Callable[[np.ndarray], np.ndarray]
    eval_lap_phi: Callable[[np.ndarray], np.ndarray]
    eval_grad_lap_phi: Callable[[np.ndarray], np.ndarray]
    gamma: float = 1.0
    c0: float = 0.0
    support_radius: float = 0.0
    kind: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def positive_part_sup(self) -> float:
        """``max(phi, 0)`` sup, exact for the built-in families."""
        return float(self.params.get("phi_plus_sup", 0.0))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, **self.params_for_json()}

    def params_for_json(self) -> dict:
        return {k: v for k, v in self.params.items() if k != "phi_plus_sup"}


def _as_points(x, n):
    x = np.asarray(x, dtype=float)
    if n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != n:
        raise ValueError(f"points must have trailing dimension {n}")
    return x


class _CapField:
    """Evaluators for ``floor + sum_i g_i(|x - c_i|)``."""

    def __init__(self, n: int, caps: Sequence[Cap], floor: float):
        self.n = n
        self.caps = tuple(caps)
        self.floor = float(floor)

    def _radial(self, cap, x):
        d = x - np.asarray(cap.center, dtype=float)
        r = np.sqrt(np.sum(d * d, axis=-1))
        return d, r

    def _profile(self, cap, r):
        """Return g, g', g'', g''' at radii ``r``."""
        g = np.zeros((4,) + r.shape)
        inner = r <= cap.rho
        g[0][inner] = cap.h0 - self.floor - cap.kappa * r[inner] ** 2
        g[1][inner] = -2.0 * cap.kappa * r[inner]
        g[2][inner] = -2.0 * cap.kappa
        blend = (r > cap.rho) & (r < cap.outer_radius)
        if np.any(blend):
            rb = r[blend]
            funcs = _blend_profile()
            args = (cap.rho, cap.blend_width, cap.h0, cap.kappa, self.floor)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                for k in range(4):
                    vals = np.asarray(funcs[k](rb, *args), dtype=float)
                    g[k][blend] = np.nan_to_num(vals, nan=0.0, posinf=0.0, neginf=0.0)
        return g

    def phi(self, x):
        x = _as_points(x, self.n)
        out = np.full(x.shape[:-1], self.floor)
        for cap in self.caps:
            _, r = self._radial(cap, x)
            out = out + self._profile(cap, r)[0]
        return out

    def grad(self, x):
        x = _as_points(x, self.n)
        out = np.zeros(x.shape)
        for cap in self.caps:
            d, r = self._radial(cap, x)
            g = self._profile(cap, r)
            inner = r <= cap.rho
            # g'(r) x/r, written without the division inside the cap
            coef = np.where(inner, -2.0 * cap.kappa, g[1] / np.where(r > 0, r, 1.0))
            out = out + coef[..., None] * d
        return out

    def lap(self, x):
        x = _as_points(x, self.n)
        out = np.zeros(x.shape[:-1])
        for cap in self.caps:
            _, r = self._radial(cap, x)
            g = self._profile(cap, r)
            inner = r <= cap.rho
            safe = np.where(r > 0, r, 1.0)
            val = g[2] + (self.n - 1) * g[1] / safe
            out = out + np.where(inner, -2.0 * self.n * cap.kappa, val)
        return out

    def grad_lap(self, x):
        x = _as_points(x, self.n)
        out = np.zeros(x.shape)
        for cap in self.caps:
            d, r = self._radial(cap, x)
            g = self._profile(cap, r)
            inner = r <= cap.rho
            safe = np.where(r > 0, r, 1.0)
            radial = g[3] + (self.n - 1) * (g[2] / safe - g[1] / safe**2)
            coef = np.where(inner, 0.0, radial / safe)
            out = out + coef[..., None] * d
        return out


def make_multi_cap_obstacle(
    caps: Sequence[Cap], n: int = 1, floor: float | None = None, x_box: float = 1.0
) -> ObstacleSpec:
    """Obstacle made of several disjoint blended caps over a negative floor."""
    if not caps:
        raise ObstacleError("at least one cap is required")
    for cap in caps:
        if len(cap.center) != n:
            raise ObstacleError("cap center dimension does not match n")
        if cap.h0 <= 0 or cap.kappa <= 0 or cap.rho <= 0 or cap.blend_width <= 0:
            raise ObstacleError("h0, kappa, rho and blend_width must be positive ({phi > 0} empty otherwise)")
        if cap.h0 - cap.kappa * cap.rho**2 >= 0:
            raise ObstacleError("cap must be negative at rho so the blend stays below zero")
        extent = np.abs(np.asarray(cap.center)) + cap.positive_radius
        if np.any(extent >= x_box):
            raise ObstacleError("{phi > 0} must be compactly contained in the x-box")
    for i, c1 in enumerate(caps):
        for c2 in caps[i + 1 :]:
            dist = math.dist(c1.center, c2.center)
            if dist < c1.outer_radius + c2.outer_radius:
                raise ObstacleError("cap supports overlap")
    if floor is None:
        floor = max(cap.h0 - cap.kappa * cap.rho**2 for cap in caps)
    if floor >= 0:
        raise ObstacleError("floor must be negative")
    fieldfn = _CapField(n, caps, floor)
    support = max(math.sqrt(sum(c * c for c in cap.center)) + cap.positive_radius for cap in caps)
    params = {
        "caps": [
            {
                "center": list(cap.center),
                "h0": cap.h0,
                "kappa": cap.kappa,
                "rho": cap.rho,
                "blend_width": cap.blend_width,
            }
            for cap in caps
        ],
        "floor": floor,
        "x_box": x_box,
        "phi_plus_sup": max(cap.h0 for cap in caps),
    }
    return ObstacleSpec(
        n=n,
        eval_phi=fieldfn.phi,
        eval_grad_phi=fieldfn.grad,
        eval_lap_phi=fieldfn.lap,
        eval_grad_lap_phi=fieldfn.grad_lap,
        gamma=1.0,
        c0=2.0 * n * min(cap.kappa for cap in caps),
        support_radius=support,
        kind="caps",
        params=params,
    )


def make_cap_obstacle(
    h0: float,
    kappa: float,
    rho: float,
    blend_width: float,
    n: int = 1,
    center=None,
    x_box: float = 1.0,
) -> ObstacleSpec:
    """Single cap ``h0 - kappa |x|^2`` blended to the constant ``h0 - kappa rho^2``."""
    if center is None:
        center = (0.0,) * n
    cap = Cap(tuple(float(c) for c in np.atleast_1d(center)), float(h0), float(kappa), float(rho), float(blend_width))
    return make_multi_cap_obstacle([cap], n=n, x_box=x_box)


def make_constant_obstacle(value: float, n: int = 1) -> ObstacleSpec:
    """Constant obstacle; ``value <= 0`` gives the trivial and Signorini cases."""
    value = float(value)

    def phi(x):
        x = _as_points(x, n)
        return np.full(x.shape[:-1], value)

    def zero_vec(x):
        return np.zeros(_as_points(x, n).shape)

    def zero(x):
        return np.zeros(_as_points(x, n).shape[:-1])

    return ObstacleSpec(
        n=n,
        eval_phi=phi,
        eval_grad_phi=zero_vec,
        eval_lap_phi=zero,
        eval_grad_lap_phi=zero_vec,
        gamma=1.0,
        c0=0.0,
        support_radius=0.0,
        kind="constant",
        params={"value": value, "phi_plus_sup": max(value, 0.0)},
    )


def obstacle_from_dict(d: dict) -> ObstacleSpec:
    kind = d.get("kind", "caps")
    n = int(d.get("n", 1))
    if kind == "constant":
        return make_constant_obstacle(d["value"], n=n)
    if kind == "caps":
        caps = [
            Cap(tuple(float(c) for c in c_["center"]), c_["h0"], c_["kappa"], c_["rho"], c_["blend_width"])
            for c_ in d["caps"]
        ]
        return make_multi_cap_obstacle(caps, n=n, floor=d.get("floor"), x_box=d.get("x_box", 1.0))
    raise ObstacleError(f"unknown obstacle kind {kind!r}")


# --------------------------------------------------------------------------
# fields and blow-up polynomials
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SolutionField:
    """Nodal values of the extension on the upper half grid."""

    grid: ExtensionGrid
    values: np.ndarray = field(repr=False)
    converged: bool = True
    residual_norm: float = 0.0
    iterations: int = 0
    residual_history: tuple = field(default=(), repr=False)

    @property
    def trace(self) -> np.ndarray:
        return self.values[..., 0]

    def value_at_node(self, index: Sequence[int], j: int) -> float:
        """Nodal accessor honoring the even reflection ``j -> |j|``."""
        return float(self.values[tuple(index) + (abs(j),)])


@dataclass(frozen=True)
class QuadraticBlowup:
    """``<A x, x> - b y^2`` with ``b = tr(A)/(1+a)`` so that ``L_a`` annihilates it."""

    A: np.ndarray
    b: float

    @classmethod
    def from_matrix(cls, A, a: float) -> "QuadraticBlowup":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        A = 0.5 * (A + A.T)
        return cls(A, float(np.trace(A) / (1.0 + a)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def is_admissible(self, tol: float = 1e-12) -> bool:
        """Member of the cone: positive semidefinite and nonzero."""
        eig = np.linalg.eigvalsh(self.A)
        return bool(eig.min() >= -tol * max(1.0, abs(eig).max()) and abs(eig).max() > tol)


def eval_p2(q: QuadraticBlowup, x, y):
    """Evaluate ``<A x, x> - b y^2``; ``x`` has shape ``(..., n)``."""
    x = _as_points(x, q.n)
    y = np.asarray(y, dtype=float)
    return np.einsum("...i,ij,...j->...", x, q.A, x) - q.b * y**2


def harmonic_quadratic(n: int, a: float) -> QuadraticBlowup:
    """``|x|^2 - lambda y^2`` with ``lambda = n/(1+a)``."""
    return QuadraticBlowup.from_matrix(np.eye(n), a)
