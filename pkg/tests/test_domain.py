import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracobs.domain import (
    Cap,
    ExtensionGrid,
    GridError,
    ObstacleError,
    QuadraticBlowup,
    build_grid,
    eval_p2,
    harmonic_quadratic,
    make_cap_obstacle,
    make_constant_obstacle,
    make_multi_cap_obstacle,
    obstacle_from_dict,
    weight_moment,
)


def test_weight_moment_matches_quadrature():
    from scipy.integrate import quad

    for p in (-0.5, 0.0, 0.5):
        ref, _ = quad(lambda t: t**p, 0.1, 0.7)
        assert weight_moment(0.1, 0.7, p) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        weight_moment(0.0, 1.0, -1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=3, s=0.5, x_box=1, y_max=1, nx=17, ny=17),
        dict(n=1, s=1.0, x_box=1, y_max=1, nx=17, ny=17),
        dict(n=1, s=0.5, x_box=-1, y_max=1, nx=17, ny=17),
        dict(n=1, s=0.5, x_box=1, y_max=1, nx=16, ny=17),
        dict(n=1, s=0.5, x_box=1, y_max=1, nx=7, ny=17),
    ],
)
def test_grid_validation(kwargs):
    with pytest.raises(GridError):
        build_grid(**kwargs)


def test_grid_geometry_and_round_trip():
    g = build_grid(1, 0.25, 1.0, 0.5, 65, 33)
    assert g.a == pytest.approx(0.5)
    assert g.xs[32] == 0.0
    assert g.hx == pytest.approx(2 / 64)
    assert g.shape == (65, 33)
    assert g.nearest_trace_index([0.01]) == (32,)
    g2 = ExtensionGrid.from_dict(g.to_dict())
    assert np.array_equal(g2.xs, g.xs) and np.array_equal(g2.y_transmissibility, g.y_transmissibility)
    # the x-face weights sum to the total weight of [0, y_max]
    assert g.x_weight.sum() == pytest.approx(weight_moment(0.0, 0.5, g.a))


def test_cap_derivatives_match_finite_differences():
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    x = np.linspace(-0.95, 0.95, 41)[:, None]
    h = 1e-5
    fd = (ob.eval_phi(x + h) - ob.eval_phi(x - h)) / (2 * h)
    assert np.allclose(ob.eval_grad_phi(x)[:, 0], fd, atol=1e-6)
    fd2 = (ob.eval_phi(x + h) - 2 * ob.eval_phi(x) + ob.eval_phi(x - h)) / h**2
    assert np.allclose(ob.eval_lap_phi(x), fd2, atol=1e-3)
    h = 1e-4
    fd3 = (ob.eval_lap_phi(x + h) - ob.eval_lap_phi(x - h)) / (2 * h)
    assert np.allclose(ob.eval_grad_lap_phi(x)[:, 0], fd3, atol=1e-3 * np.abs(fd3).max() + 1e-6)


def test_cap_concavity_on_positive_set():
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    x = np.linspace(-1, 1, 2001)[:, None]
    pos = ob.eval_phi(x) > 0
    assert np.all(ob.eval_lap_phi(x)[pos] <= -ob.c0 + 1e-12)
    assert ob.positive_part_sup() == pytest.approx(0.2)
    assert np.max(ob.eval_phi(x)) == pytest.approx(0.2)


def test_cap_two_dimensional_is_radial():
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2, n=2)
    t = np.linspace(0, 2 * np.pi, 9)
    pts = 0.5 * np.stack([np.cos(t), np.sin(t)], axis=-1)
    assert np.ptp(ob.eval_phi(pts)) < 1e-14


@pytest.mark.parametrize(
    "caps",
    [
        [],
        [Cap((0.0,), -0.1, 1.0, 0.6, 0.2)],
        [Cap((0.0,), 0.5, 1.0, 0.6, 0.2)],
        [Cap((0.8,), 0.2, 1.0, 0.6, 0.2)],
        [Cap((-0.2,), 0.05, 3.0, 0.2, 0.05), Cap((0.2,), 0.05, 3.0, 0.2, 0.05)],
    ],
)
def test_invalid_caps(caps):
    with pytest.raises(ObstacleError):
        make_multi_cap_obstacle(caps)


def test_obstacle_dict_round_trip():
    for ob in (make_cap_obstacle(0.3, 3.0, 0.35, 0.15, center=(0.1,)), make_constant_obstacle(-0.2)):
        ob2 = obstacle_from_dict(ob.to_dict())
        x = np.linspace(-1, 1, 33)[:, None]
        assert np.array_equal(ob.eval_phi(x), ob2.eval_phi(x))
    with pytest.raises(ObstacleError):
        obstacle_from_dict({"kind": "mystery"})


def test_harmonic_quadratic_is_annihilated():
    # L_a(x^2 - lambda y^2) = -|y|^a (2n - 2 lambda (1 + a)) = 0 for lambda = n / (1 + a)
    for n in (1, 2):
        for a in (-0.5, 0.0, 0.5):
            q = harmonic_quadratic(n, a)
            assert q.b * (1 + a) == pytest.approx(n)
            assert q.is_admissible()
    assert not QuadraticBlowup.from_matrix([[-1.0]], 0.0).is_admissible()
    assert not QuadraticBlowup.from_matrix([[0.0]], 0.0).is_admissible()


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.05, 0.95),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.floats(0.1, 5.0),
    st.floats(-2, 2),
)
def test_p2_is_two_homogeneous(s, entries, lam, y):
    A = np.array([[entries[0], entries[1]], [entries[1], entries[2]]])
    q = QuadraticBlowup.from_matrix(A, 1 - 2 * s)
    x = np.array([0.3, -0.7])
    assert eval_p2(q, lam * x, lam * y) == pytest.approx(lam**2 * eval_p2(q, x, y), rel=1e-9, abs=1e-12)
    assert eval_p2(q, x, -y) == pytest.approx(eval_p2(q, x, y))
