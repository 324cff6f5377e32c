import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracobs.diagnostics import centered_from_function
from fracobs.domain import QuadraticBlowup, build_grid, eval_p2, make_constant_obstacle
from fracobs.freeboundary import (
    REGULAR,
    SINGULAR,
    FreeBoundaryError,
    FreeBoundaryReport,
    SchemaError,
    analyze_free_boundary,
    critical_height,
    density_ratio,
    extract_contact_and_boundary,
    fit_p2,
    monneau_constant,
    monneau_descends,
    select_C0,
    stratum_of,
)
from fracobs.lcp import assemble_operator, solve_obstacle
from fracobs.matrix import MIDDLE_REGION, three_caps


@pytest.fixture(scope="module")
def cap_report():
    from fracobs.matrix import wide_cap

    g = build_grid(1, 0.5, 1.0, 1.0, 257, 129)
    op = assemble_operator(g)
    ob = wide_cap()
    return analyze_free_boundary(solve_obstacle(op, ob), ob, op)


def test_coarse_grid_is_unresolved(cap_solve):
    g, op, ob, f = cap_solve
    rep = analyze_free_boundary(f, ob, op)
    assert rep.unresolved_fraction() == 1.0
    assert all(p.reason for p in rep.points)


def test_contact_interval_and_boundary(cap_solve):
    g, op, ob, f = cap_solve
    masks = extract_contact_and_boundary(f, ob)
    idx = np.nonzero(masks.contact)[0]
    assert np.all(np.diff(idx) == 1)  # one interval
    assert masks.boundary_indices() == [(idx[0],), (idx[-1],)]


def test_density_half_at_interval_end(cap_solve):
    g, op, ob, f = cap_solve
    masks = extract_contact_and_boundary(f, ob)
    end = g.xs[np.nonzero(masks.contact)[0][-1]]
    assert density_ratio(masks, g, [end], 0.1) == pytest.approx(0.5, abs=0.05)
    with pytest.raises(FreeBoundaryError):
        density_ratio(masks, g, [end], g.hx)


def test_interval_endpoints_are_regular(cap_report):
    assert [p.label for p in cap_report.points] == [REGULAR, REGULAR]
    for p in cap_report.points:
        assert p.m_hat == pytest.approx(1.5, abs=0.15)
        assert p.c1_hat > 0 and p.c2_hat > 0
    # mirror symmetry of the two endpoints
    a, b = cap_report.points
    assert a.location[0] == pytest.approx(-b.location[0], abs=1e-10)


def test_report_json_round_trip(cap_report):
    text = cap_report.to_json()
    back = FreeBoundaryReport.from_json(text)
    assert back.to_json() == text
    d = json.loads(text)
    d["schema_version"] = 99
    with pytest.raises(SchemaError):
        FreeBoundaryReport.from_dict(d)


def test_empty_report_for_negative_obstacle():
    g = build_grid(1, 0.5, 1.0, 1.0, 65, 33)
    op = assemble_operator(g)
    ob = make_constant_obstacle(-0.2)
    rep = analyze_free_boundary(solve_obstacle(op, ob), ob, op)
    assert rep.points == [] and rep.unresolved_fraction() == 0.0
    assert FreeBoundaryReport.from_json(rep.to_json()).points == []


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(-0.5, 0.5))
def test_fit_p2_recovers_quadratic(A, x0):
    g = build_grid(1, 0.5, 1.0, 1.0, 129, 65)
    q = QuadraticBlowup.from_matrix([[A]], g.a)
    cf = centered_from_function(g, [x0], lambda x, y: eval_p2(q, x, y))
    fit = fit_p2(cf, 0.2)
    assert fit.A[0, 0] == pytest.approx(A, rel=1e-9)
    assert fit.residual < 1e-9


def test_stratum_kernel_dimension():
    assert stratum_of(np.diag([1.0, 0.0]), 1e-3)[0] == 1
    assert stratum_of(np.diag([1.0, 2.0]), 1e-3)[0] == 0
    k, flag = stratum_of(np.zeros((2, 2)), 1e-3)
    assert k is None and flag


def test_monneau_helpers():
    r = np.array([0.4, 0.2, 0.1, 0.05])
    assert monneau_constant(r, [4.0, 3.0, 2.0, 1.0]) == 0.0
    # a rise of 0.1 over r^1 span 0.1 needs C_M = 1
    assert monneau_constant(r, [1.0, 1.0, 1.1, 1.1]) == pytest.approx(1.0)
    assert monneau_descends([1.0, 0.1, 0.01, 0.02], 0.05)
    assert not monneau_descends([1.0, 2.0, 0.01], 0.05)
    assert not monneau_descends([1.0, 0.5], 0.05)


def test_select_C0_picks_smallest_monotone(cap_report):
    diags = list(cap_report.diagnostics.values())
    c = select_C0(diags)
    assert c is not None and c <= 16.0


def test_critical_height_bracket_and_prediction():
    g = build_grid(1, 0.5, 1.0, 1.0, 129, 65)
    op = assemble_operator(g)
    region = np.abs(g.xs) < MIDDLE_REGION
    bracket, f = critical_height(three_caps, op, region, 1e-3, 0.2)
    assert bracket.width <= 1e-9 * max(bracket.above, 1.0) * 1.0001
    # below the critical height the middle cap is untouched, so the gap
    # predicts it: h + min gap is the critical value
    assert bracket.below + bracket.gap_below == pytest.approx(bracket.above, abs=1e-8)
    assert bracket.evaluations < 12
    with pytest.raises(FreeBoundaryError):
        critical_height(three_caps, op, region, 0.1, 0.2)


def test_bisection_point_is_singular():
    from fracobs.matrix import solve_case

    case = solve_case(0.5, "three_caps", nx=257)
    rep = analyze_free_boundary(case.field, case.obstacle, case.op)
    middle = [p for p in rep.points if abs(p.location[0]) < MIDDLE_REGION]
    assert len(middle) == 1
    p = middle[0]
    assert p.label == SINGULAR
    assert p.stratum == 0
    assert p.blowup().is_admissible()
