"""Quick internal checks run by ``fracobs selftest``.

The acceptance properties run at reduced resolution next to a few exact
identities of each module.  The whole suite takes a few minutes.
"""

from __future__ import annotations

import tempfile
import time

import numpy as np
from scipy import stats

from . import checks
from .checks import CheckResult
from .domain import make_cap_obstacle, make_constant_obstacle, build_grid
from .freeboundary import analyze_free_boundary
from .lcp import assemble_operator, monotonicity_check, solve_obstacle


def _exact(name, fn) -> CheckResult:
    t = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # noqa: BLE001
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t)


def _empty_report():
    g = build_grid(1, 0.5, 1.0, 1.0, 65, 33)
    op = assemble_operator(g)
    ob = make_constant_obstacle(-0.1)
    rep = analyze_free_boundary(solve_obstacle(op, ob), ob, op)
    return len(rep.points) == 0, f"{len(rep.points)} free boundary points for a negative obstacle"


def _solver_invariants():
    g = build_grid(1, 0.5, 1.0, 1.0, 129, 65)
    op = assemble_operator(g)
    f = solve_obstacle(op, make_cap_obstacle(0.2, 1.0, 0.6, 0.2))
    mono = monotonicity_check(f)
    sym = float(np.max(np.abs(f.values - f.values[::-1])))
    ok = f.converged and mono.passed and sym < 1e-8
    return ok, f"converged in {f.iterations} sweeps, x-symmetry defect {sym:.1e}, y-monotone {mono.passed}"


def _cauchy_ks():
    from .stopping import StableProcessConfig, block_rng, sample_increment

    cfg = StableProcessConfig(alpha=1.0, dt=1.0, rng_seed=3)
    x = sample_increment(cfg, block_rng(cfg, 0), 200_000)
    p = stats.kstest(x, "cauchy").pvalue
    return p > 0.01, f"KS p-value {p:.3f} against the standard Cauchy law"


def _stop_immediately():
    from .stopping import StableProcessConfig, estimate_value, stop_immediately

    ob = make_cap_obstacle(0.2, 1.0, 0.6, 0.2)
    e = estimate_value(None, ob, StableProcessConfig(n_paths=10), [0.1], stop_immediately())
    phi = float(ob.eval_phi(np.array([[0.1]]))[0])
    return e.mean == phi and e.se == 0.0, f"J = {e.mean:.6f}, phi = {phi:.6f}, SE = {e.se}"


def run_selftest(nx: int = 513, mc_paths: int = 20_000) -> list[CheckResult]:
    results = [
        _exact("solver invariants", _solver_invariants),
        _exact("empty report for a negative obstacle", _empty_report),
        _exact("Cauchy sampler", _cauchy_ks),
        _exact("stop immediately", _stop_immediately),
        checks.check_operator(),
        checks.check_polynomial(nx=129),
        checks.check_signorini(sizes=(129, 257, 513)),
    ]
    cases = checks.matrix(nx=nx)
    results += [
        checks.check_dichotomy(cases),
        checks.check_monotonicity(cases),
        checks.check_nondegeneracy(cases),
        checks.check_blowup(case=next(c for c in cases if c.s == 0.5 and c.name == "three_caps")),
        checks.check_stopping(points=(-0.55, 0.35, 0.7), n_paths=mc_paths, dominance_points=(0.35,)),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        results.append(checks.check_determinism(tmp))
    return results
