"""Interpolation of grid fields and weighted sphere / ball quadrature.

Sphere rules integrate ``|omega_y|^a f(omega)`` over the unit sphere of
``R^{n+1}``.  The weight is singular (``a < 0``) or degenerate (``a > 0``)
on the equator ``omega_y = 0``; panels touching it are refined
geometrically and the innermost sub-panel uses Gauss-Jacobi nodes.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def _gauss_legendre(lo, hi, q):
    t, w = roots_legendre(q)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return mid + half * t, half * w


def _gauss_jacobi_left(lo, hi, a, q):
    """Nodes/weights for ``int_lo^hi (t - lo)^a f(t) dt``."""
    t, w = roots_jacobi(q, 0.0, a)  # weight (1 + t)^a on [-1, 1]
    half = 0.5 * (hi - lo)
    return lo + half * (t + 1.0), w * half ** (1.0 + a)


def _gauss_jacobi_right(lo, hi, a, q):
    """Nodes/weights for ``int_lo^hi (hi - t)^a f(t) dt``."""
    t, w = roots_jacobi(q, a, 0.0)  # weight (1 - t)^a on [-1, 1]
    half = 0.5 * (hi - lo)
    return lo + half * (t + 1.0), w * half ** (1.0 + a)


def graded_edges(lo, hi, singular_lo, singular_hi, levels=10, ratio=0.25):
    """Split ``[lo, hi]`` geometrically towards singular endpoints."""
    pts = [lo, hi]
    width = hi - lo
    if singular_lo:
        pts += [lo + width * 0.5 * ratio**k for k in range(levels)]
    if singular_hi:
        pts += [hi - width * 0.5 * ratio**k for k in range(levels)]
    return np.unique(np.array(pts))


def _equator_rule(edges, singular, q, levels, a, weight):
    """Rule for ``int weight(t) f(t) dt`` where ``weight`` vanishes or blows up
    like ``|t - s|^a`` at the singular points.

    Panels touching a singular point are refined geometrically; the last
    sub-panel uses Gauss-Jacobi nodes for the ``|t - s|^a`` factor and
    Gauss-Legendre with ``weight`` elsewhere.
    """
    nodes, weights = [], []
    sing = np.asarray(singular, dtype=float)
    for lo, hi in zip(edges[:-1], edges[1:]):
        at_lo = bool(np.any(np.isclose(sing, lo, atol=1e-14)))
        at_hi = bool(np.any(np.isclose(sing, hi, atol=1e-14)))
        sub = graded_edges(lo, hi, at_lo, at_hi, levels) if (at_lo or at_hi) else np.array([lo, hi])
        last = len(sub) - 2
        for k, (a_, b_) in enumerate(zip(sub[:-1], sub[1:])):
            if at_lo and k == 0:
                t, w = _gauss_jacobi_left(a_, b_, a, q)
                w = w * weight(t) / (t - a_) ** a
            elif at_hi and k == last:
                t, w = _gauss_jacobi_right(a_, b_, a, q)
                w = w * weight(t) / (b_ - t) ** a
            else:
                t, w = _gauss_legendre(a_, b_, q)
                w = w * weight(t)
            nodes.append(t)
            weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=256)
def sphere_rule(n: int, a: float, panels: int, q: int = 8, levels: int = 12):
    """Directions ``(M, n+1)`` and weights ``(M,)`` for ``int_{S^n} |w_y|^a f``.

    ``panels`` is the number of angular panels around a great circle; it is
    rounded up to a multiple of 4 so the equator crossings are panel edges.
    Panels touching the equator are graded geometrically, which keeps the
    rule accurate when ``f`` itself carries a factor ``|w_y|^(-2a)`` (the
    square of the normal derivative near the contact set).
    """
    panels = max(8, 4 * int(np.ceil(panels / 4)))
    if n == 1:
        edges = np.linspace(0.0, 2.0 * np.pi, panels + 1)
        theta, w = _equator_rule(
            edges, [0.0, np.pi, 2.0 * np.pi], q, levels, a, lambda t: np.abs(np.sin(t)) ** a
        )
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return _frozen(dirs), _frozen(w)
    if n == 2:
        # polar angle psi measured from the y axis; weight |cos psi|^a sin psi
        edges = np.linspace(0.0, np.pi, panels // 2 + 1)
        psi, w = _equator_rule(
            edges, [np.pi / 2], q, levels, a, lambda t: np.abs(np.cos(t)) ** a * np.sin(t)
        )
        m = panels * 2
        phi = (np.arange(m) + 0.5) * (2.0 * np.pi / m)
        wphi = np.full(m, 2.0 * np.pi / m)
        P, F = np.meshgrid(psi, phi, indexing="ij")
        W = np.outer(w, wphi)
        dirs = np.stack([np.sin(P) * np.cos(F), np.sin(P) * np.sin(F), np.cos(P)], axis=-1)
        return _frozen(dirs.reshape(-1, 3)), _frozen(W.ravel())
    raise ValueError("n must be 1 or 2")


@lru_cache(maxsize=256)
def radial_rule(p: float, levels: int = 5, q: int = 8):
    """Nodes in ``(0, 1]`` and weights for ``int_0^1 rho^p g(rho) d rho``.

    Dyadic panels ``[2^-(k+1), 2^-k]`` with Gauss-Legendre, innermost panel
    Gauss-Jacobi for the ``rho^p`` factor.
    """
    nodes, weights = [], []
    for k in range(levels):
        lo, hi = 2.0 ** -(k + 1), 2.0**-k
        t, w = _gauss_legendre(lo, hi, q)
        nodes.append(t)
        weights.append(w * t**p)
    t, w = _gauss_jacobi_left(0.0, 2.0**-levels, p, q)
    nodes.append(t)
    weights.append(w)
    return _frozen(np.concatenate(nodes)), _frozen(np.concatenate(weights))


def _frozen(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# interpolation
# --------------------------------------------------------------------------


def _lagrange4(t):
    """Cubic Lagrange weights and derivative weights on nodes 0, 1, 2, 3."""
    w = np.stack(
        [
            -(t - 1) * (t - 2) * (t - 3) / 6.0,
            t * (t - 2) * (t - 3) / 2.0,
            -t * (t - 1) * (t - 3) / 2.0,
            t * (t - 1) * (t - 2) / 6.0,
        ]
    )
    dw = np.stack(
        [
            -(3 * t**2 - 12 * t + 11) / 6.0,
            (3 * t**2 - 10 * t + 6) / 2.0,
            -(3 * t**2 - 8 * t + 3) / 2.0,
            (3 * t**2 - 6 * t + 2) / 6.0,
        ]
    )
    return w, dw


def _trace_layer_basis(a: float):
    """Weights on nodes ``t = 0..3`` reproducing ``{1, t^(1-a), t^2, t^(3-a)}``.

    Solutions of ``L_a v = 0`` expand as ``f0 + f1 y^(1-a) + f2 y^2 + ...`` at
    the trace, so this basis captures the boundary layer of the normal
    derivative on the contact set.  For ``a = 0`` it is the cubic basis.
    """
    expo = np.array([0.0, 1.0 - a, 2.0, 3.0 - a])
    nodes = np.arange(4.0)
    with np.errstate(divide="ignore"):
        B = np.where(expo[None, :] == 0.0, 1.0, nodes[:, None] ** expo[None, :])
    Binv = np.linalg.inv(B)

    def weights(t):
        t = np.asarray(t, dtype=float)
        tt = np.maximum(t, 1e-300)
        phi = np.stack([np.ones_like(t)] + [tt**e for e in expo[1:]])
        dphi = np.stack([np.zeros_like(t)] + [e * tt ** (e - 1.0) for e in expo[1:]])
        # node weights: value = sum_k f_k w_k with w = Binv^T phi
        return Binv.T @ phi.reshape(4, -1), Binv.T @ dphi.reshape(4, -1)

    return weights


class GridInterpolator:
    """Local tensor cubic interpolation with even reflection in ``y``.

    Away from the trace the rule is exact for polynomials of degree three in
    each variable.  In the first cell above the trace the ``y`` direction
    uses the basis ``{1, y^(1-a), y^2, y^(3-a)}`` on the nodes ``0..3``
    (``trace_layer=True``), still exact for the even quadratics ``b y^2``.
    Queries with ``y < 0`` are answered from ``|y|`` and the ``y``
    derivative changes sign accordingly.
    """

    def __init__(self, grid, values, order: int = 3, trace_layer: bool = True):
        if order not in (1, 3):
            raise ValueError("order must be 1 or 3")
        self.grid = grid
        self.order = order
        v = np.asarray(values, dtype=float)
        # two reflected layers below the trace
        self.padded = np.concatenate([v[..., 2:0:-1], v], axis=-1)
        self.x0 = -grid.x_box
        self.layer = _trace_layer_basis(grid.a) if (trace_layer and order == 3) else None

    def _axis(self, coord, h, count, offset):
        width = self.order + 1
        pos = coord / h + offset
        base = np.floor(pos).astype(int) - (width // 2 - 1)
        base = np.clip(base, 0, count - width)
        t = pos - base
        if self.order == 3:
            w, dw = _lagrange4(t)
        else:
            w = np.stack([1.0 - t, t])
            dw = np.stack([-np.ones_like(t), np.ones_like(t)])
        return base, w, dw / h

    def _y_axis(self, ay):
        g = self.grid
        base, w, dw = self._axis(ay, g.hy, g.ny + 2, 2.0)
        if self.layer is not None:
            near = ay < g.hy
            if np.any(near):
                t = ay[near] / g.hy
                lw, ldw = self.layer(t)
                base = np.where(near, 2, base)
                w[:, near] = lw
                dw[:, near] = ldw / g.hy
        return base, w, dw

    def __call__(self, x, y, gradient: bool = False):
        """Values (and gradients ``(..., n+1)``) at points ``x (..., n)``, ``y (...)``."""
        g = self.grid
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sign = np.where(y < 0, -1.0, 1.0)
        ay = np.abs(y)
        axes = []
        for k in range(g.n):
            axes.append(self._axis(x[..., k] - self.x0, g.hx, g.nx, 0.0))
        axes.append(self._y_axis(ay))
        width = self.order + 1
        val = np.zeros(y.shape)
        grad = np.zeros(y.shape + (g.n + 1,)) if gradient else None
        dims = g.n + 1
        for combo in np.ndindex(*(width,) * dims):
            idx = tuple(axes[d][0] + combo[d] for d in range(dims))
            f = self.padded[idx]
            wt = np.ones(y.shape)
            for d in range(dims):
                wt = wt * axes[d][1][combo[d]]
            val += wt * f
            if gradient:
                for e in range(dims):
                    wd = np.ones(y.shape)
                    for d in range(dims):
                        wd = wd * (axes[d][2][combo[d]] if d == e else axes[d][1][combo[d]])
                    grad[..., e] += wd * f
        if gradient:
            grad[..., -1] *= sign
            return val, grad
        return val
