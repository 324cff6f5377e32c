import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracobs.domain import build_grid, make_cap_obstacle, make_constant_obstacle
from fracobs.lcp import (
    InfeasibleBoundary,
    NonConvergence,
    SolverConfig,
    assemble_operator,
    energy,
    monotonicity_check,
    optimal_omega,
    solve_obstacle,
    trace_residual,
)


def small(s=0.5, nx=33):
    g = build_grid(1, s, 1.0, 1.0, nx, (nx + 1) // 2)
    return g, assemble_operator(g)


def test_operator_symmetric_under_cell_weights():
    for s in (0.25, 0.75):
        g, op = small(s)
        W = op.cell_measure().ravel()
        M = (op.matrix.multiply(W[:, None])).toarray()
        assert np.allclose(M, M.T, atol=1e-12)


def test_constants_in_kernel():
    g, op = small(0.3)
    assert np.max(np.abs(op.apply(np.ones(g.shape)))) < 1e-12


def test_operator_exact_on_linear_and_y_power():
    # x and y^(1-a) are L_a-harmonic; the x faces and the exact y
    # transmissibility reproduce both away from the outer boundary
    g, op = small(0.3, 65)
    X, Y = g.node_coordinates()
    inner = ~np.asarray(op.boundary_mask)
    inner[:, 0] = False
    for u in (X, Y ** (1 - g.a)):
        assert np.max(np.abs(op.apply(u)[inner])) < 1e-10


def test_even_reflection_trace_row():
    # y^(1-a) has weighted flux |y|^a d/dy = 1 - a through every horizontal face;
    # the trace row sees only the face above it and is doubled by the reflection
    g, op = small(0.3, 65)
    X, Y = g.node_coordinates()
    r = op.apply(Y ** (1 - g.a))[1:-1, 0]
    assert np.allclose(r, -2.0 * (1 - g.a) * g.hx, rtol=1e-10)


def test_pointwise_residual_interior_order():
    from fracobs.checks import operator_residuals, observed_orders

    res = operator_residuals(0.25, (33, 65, 129))
    assert np.min(observed_orders(res)) >= 1.9


def test_solution_invariants(cap_solve):
    g, op, ob, f = cap_solve
    phi = ob.eval_phi(g.trace_points())
    gap = f.trace - phi
    res = trace_residual(op, f)
    assert f.converged
    assert gap.min() >= -1e-12
    # complementarity on the free trace nodes
    free = slice(1, -1)
    assert np.all(res[free] >= -1e-9)
    assert np.max(np.abs(res[free] * gap[free])) < 1e-9
    # interior rows are solved
    r = op.apply(f.values)[1:-1, 1:-1]
    assert np.max(np.abs(r)) < 1e-9
    assert monotonicity_check(f).passed
    assert np.max(np.abs(f.values - f.values[::-1])) < 1e-8


def test_energy_minimal_among_admissible(cap_solve, rng):
    g, op, ob, f = cap_solve
    e0 = energy(op, f.values)
    phi = ob.eval_phi(g.trace_points())
    for _ in range(5):
        v = np.array(f.values)
        pert = rng.normal(size=g.shape) * 1e-3
        pert[0, :] = pert[-1, :] = pert[:, -1] = 0.0
        v += pert
        v[:, 0] = np.maximum(v[:, 0], phi)
        assert energy(op, v) >= e0 - 1e-12


def test_energy_decreases_with_higher_obstacle_removed():
    # raising the obstacle raises the solution and the energy
    g, op = small(0.5, 65)
    e = [energy(op, solve_obstacle(op, make_cap_obstacle(h, 1.0, 0.6, 0.2)).values) for h in (0.1, 0.2, 0.3)]
    assert e[0] < e[1] < e[2]


@settings(max_examples=8, deadline=None)
@given(st.floats(0.05, 0.3), st.floats(0.0, 0.1), st.sampled_from([0.25, 0.5, 0.75]))
def test_comparison_principle(h, dh, s):
    g, op = small(s)
    u1 = solve_obstacle(op, make_cap_obstacle(h, 1.0, 0.6, 0.2)).values
    u2 = solve_obstacle(op, make_cap_obstacle(h + dh, 1.0, 0.6, 0.2)).values
    assert np.all(u2 >= u1 - 1e-9)


@settings(max_examples=6, deadline=None)
@given(st.floats(-0.3, 0.3))
def test_x_reflection_symmetry(c):
    g, op = small(0.5, 65)
    f1 = solve_obstacle(op, make_cap_obstacle(0.2, 3.0, 0.3, 0.1, center=(c,)))
    f2 = solve_obstacle(op, make_cap_obstacle(0.2, 3.0, 0.3, 0.1, center=(-c,)))
    assert np.max(np.abs(f1.values - f2.values[::-1])) < 1e-8


def test_negative_obstacle_gives_zero():
    g, op = small()
    f = solve_obstacle(op, make_constant_obstacle(-0.5))
    assert np.max(np.abs(f.values)) == 0.0


def test_infeasible_boundary():
    g, op = small()
    with pytest.raises(InfeasibleBoundary):
        solve_obstacle(op, make_constant_obstacle(0.1))


def test_nonconvergence_carries_history(cap_solve):
    g, op, ob, _ = cap_solve
    with pytest.raises(NonConvergence) as exc:
        solve_obstacle(op, ob, SolverConfig(max_iters=25))
    assert len(exc.value.history) >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(omega=2.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)


def test_omega_choices_agree(cap_solve):
    g, op, ob, f = cap_solve
    assert 1.0 < optimal_omega(g) < 2.0
    f2 = solve_obstacle(op, ob, SolverConfig(omega=1.8))
    assert np.max(np.abs(f2.values - f.values)) < 1e-8


def test_warm_start_same_answer(cap_solve):
    g, op, ob, f = cap_solve
    f2 = solve_obstacle(op, ob, initial=f.values)
    assert f2.iterations <= 25
    assert np.max(np.abs(f2.values - f.values)) < 1e-9
