import numpy as np
import pytest
from scipy import integrate, stats

from fracobs.domain import build_grid, make_cap_obstacle, make_constant_obstacle
from fracobs.domain import SolutionField
from fracobs.stopping import (
    StableProcessConfig,
    StoppingError,
    block_rng,
    estimate_value,
    estimates_to_csv,
    martingale_check,
    never_stop,
    poisson_constant,
    sample_increment,
    stop_at_fixed_time,
    stop_immediately,
    stop_on_contact,
)


def test_config_validation():
    for kw in (dict(alpha=2.0), dict(alpha=0.0), dict(dt=0.0), dict(n_paths=0), dict(max_time=-1)):
        with pytest.raises(StoppingError):
            StableProcessConfig(**kw)


def test_cauchy_ks_at_one_million():
    cfg = StableProcessConfig(alpha=1.0, dt=1.0, rng_seed=1)
    x = sample_increment(cfg, block_rng(cfg, 0), 1_000_000)
    assert stats.kstest(x, "cauchy").pvalue > 0.01
    assert abs(np.median(x)) < 5e-3


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_stability_of_sums(alpha):
    # the sum of k increments at step dt has the law of one increment at step k dt
    cfg = StableProcessConfig(alpha=alpha, dt=0.01, rng_seed=2)
    rng = block_rng(cfg, 0)
    k, m = 4, 100_000
    summed = sample_increment(cfg, rng, (m, k)).sum(axis=1)
    single = sample_increment(cfg, rng, m, dt=k * cfg.dt)
    assert stats.ks_2samp(summed, single).pvalue > 0.01


def test_block_seeding_reproducible():
    cfg = StableProcessConfig(alpha=1.2, rng_seed=7)
    a = sample_increment(cfg, block_rng(cfg, 3), 10)
    b = sample_increment(cfg, block_rng(cfg, 3), 10)
    c = sample_increment(cfg, block_rng(cfg, 4), 10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_poisson_kernel_normalised():
    for s in (0.25, 0.5, 0.75):
        c = poisson_constant(1, s)
        y = 0.3
        val, _ = integrate.quad(lambda x: c * y ** (2 * s) / (x * x + y * y) ** ((1 + 2 * s) / 2), -np.inf, np.inf)
        assert val == pytest.approx(1.0, rel=1e-8)


def test_stop_immediately_exact():
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    e = estimate_value(None, ob, StableProcessConfig(n_paths=5), [0.3], stop_immediately())
    assert e.mean == float(ob.eval_phi(np.array([[0.3]]))[0]) and e.se == 0.0


def test_errors():
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    with pytest.raises(StoppingError):
        estimate_value(None, ob, StableProcessConfig(n_paths=5), [0.3], stop_on_contact())


def test_standard_error_definition():
    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    cfg = StableProcessConfig(alpha=1.0, n_paths=2000, block=500, max_time=0.2, dt=0.01)
    e = estimate_value(None, ob, cfg, [0.0], stop_at_fixed_time(0.05))
    assert e.n_paths == 2000 and 0 < e.se < 0.01
    assert e.truncated == 0.0
    e2 = estimate_value(None, ob, cfg, [0.0], never_stop())
    assert e2.truncated > 0
    assert estimates_to_csv([e, e2]).splitlines()[0] == "x0,strategy,J,SE,truncated"


def zero_field():
    g = build_grid(1, 0.5, 1.5, 1.5, 65, 33)
    return SolutionField(g, np.zeros(g.shape))


def test_martingale_trivial_and_precondition():
    cfg = StableProcessConfig(alpha=1.0, n_paths=1000)
    rep = martingale_check(zero_field(), cfg, [0.2], 0.01)
    assert rep.passed and rep.mean == 0.0 and rep.u == 0.0
    with pytest.raises(StoppingError):
        martingale_check(zero_field(), cfg, [0.2], 0.01, obstacle=make_constant_obstacle(0.0))


@pytest.fixture(scope="module")
def exterior():
    from fracobs.freeboundary import extract_contact_and_boundary
    from fracobs.stopping import solve_exterior

    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2, x_box=1.5)
    ext = solve_exterior(ob, 0.5, nx=193, ny=97)
    return ob, ext, extract_contact_and_boundary(ext.field, ob)


def test_exterior_solution_pinned(exterior):
    ob, ext, masks = exterior
    g = ext.field.grid
    outside = np.abs(g.xs) > 1.0 + 1e-12
    assert np.all(ext.field.trace[outside] == 0.0)
    assert ext.far_field_change < 1e-4
    assert np.all(ext.field.trace >= ob.eval_phi(g.trace_points()) - 1e-12)


def test_martingale_on_cap(exterior):
    ob, ext, masks = exterior
    cfg = StableProcessConfig(alpha=1.0, n_paths=200_000, rng_seed=5)
    rep = martingale_check(ext.field, cfg, [0.6], 0.002, obstacle=ob)
    assert rep.passed, rep
    with pytest.raises(StoppingError):
        martingale_check(ext.field, cfg, [0.0], 0.002, obstacle=ob)


def test_contact_strategy_beats_alternatives(exterior):
    ob, ext, masks = exterior
    cfg = StableProcessConfig(alpha=1.0, dt=2e-3, n_paths=20_000, rng_seed=9)
    best = estimate_value(ext.field, ob, cfg, [0.5], stop_on_contact(), masks.contact)
    for st in (stop_immediately(), stop_at_fixed_time(0.05), stop_at_fixed_time(0.3)):
        other = estimate_value(ext.field, ob, cfg, [0.5], st)
        assert best.mean >= other.mean - 3 * (best.se + other.se)
