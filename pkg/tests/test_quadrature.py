import math

import numpy as np
import pytest
from scipy.special import beta as beta_fn

from fracobs.domain import build_grid
from fracobs.quadrature import GridInterpolator, radial_rule, sphere_rule


def weighted_sphere_mass(n, a):
    """int_{S^n} |w_y|^a, closed form through the Beta function."""
    if n == 1:
        return 2.0 * beta_fn(0.5, (a + 1) / 2)
    return 2.0 * math.pi * 2.0 / (a + 1)


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("a", [-0.9, -0.5, 0.0, 0.5, 0.9])
def test_sphere_rule_mass(n, a):
    dirs, w = sphere_rule(n, a, 32)
    assert np.allclose(np.sum(dirs**2, axis=-1), 1.0)
    assert w.sum() == pytest.approx(weighted_sphere_mass(n, a), rel=1e-6)


@pytest.mark.parametrize("a", [-0.5, 0.5])
def test_sphere_rule_moments(a):
    # int_{S^1} |sin t|^a cos^2 t dt = 2 B(3/2, (a+1)/2)
    dirs, w = sphere_rule(1, a, 32)
    assert np.sum(w * dirs[:, 0] ** 2) == pytest.approx(2 * beta_fn(1.5, (a + 1) / 2), rel=1e-6)
    assert abs(np.sum(w * dirs[:, 0])) < 1e-9


@pytest.mark.parametrize("p", [-0.5, 0.3, 2.0])
def test_radial_rule(p):
    t, w = radial_rule(p)
    assert np.all((t > 0) & (t <= 1))
    assert w.sum() == pytest.approx(1 / (p + 1), rel=1e-12)
    assert np.sum(w * t**2) == pytest.approx(1 / (p + 3), rel=1e-12)


def test_interpolator_exact_on_cubics_and_trace_layer():
    g = build_grid(1, 0.3, 1.0, 1.0, 33, 17)
    X, Y = g.node_coordinates()
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.8, 0.8, 50)
    # tensor cubics above the first cell
    y = rng.uniform(g.hy, 0.8, 50)
    cubic = lambda x, y: x**3 - 2 * x * y**2 + y**3  # noqa: E731
    assert np.allclose(GridInterpolator(g, cubic(X, Y))(x[:, None], y), cubic(x, y), atol=1e-12)
    # the trace-layer basis inside the first cell
    y = rng.uniform(0.0, g.hy, 50)
    layer = lambda x, y: 1 + x * y ** (1 - g.a) - y**2 + 0.5 * y ** (3 - g.a)  # noqa: E731
    assert np.allclose(GridInterpolator(g, layer(X, Y))(x[:, None], y), layer(x, y), atol=1e-12)
    # even reflection for y < 0
    ip = GridInterpolator(g, X**2 + Y**2)
    assert np.allclose(ip(x[:, None], -y), ip(x[:, None], y))


def test_interpolator_gradient():
    g = build_grid(1, 0.5, 1.0, 1.0, 33, 17)
    X, Y = g.node_coordinates()
    ip = GridInterpolator(g, X**2 * Y + Y**3)
    x = np.array([[0.1], [-0.3]])
    y = np.array([0.4, 0.25])
    v, grad = ip(x, y, gradient=True)
    assert np.allclose(grad[..., 0], 2 * x[:, 0] * y, atol=1e-10)
    assert np.allclose(grad[..., -1], x[:, 0] ** 2 + 3 * y**2, atol=1e-10)


def test_interpolator_rejects_order():
    g = build_grid(1, 0.5, 1.0, 1.0, 33, 17)
    with pytest.raises(ValueError):
        GridInterpolator(g, np.zeros(g.shape), order=2)
