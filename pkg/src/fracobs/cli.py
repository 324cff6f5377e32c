"""Batch driver.

    fracobs solve    --config run.json --out out/
    fracobs analyze  --config run.json --out out/ --field out/field.bin
    fracobs classify --config run.json --out out/ --field out/field.bin
    fracobs mc       --config run.json --out out/ --seed 7
    fracobs sweep    --config run.json --out out/ --param obstacle.caps.1.h0 --values 0.01:0.05:9
    fracobs selftest

Exit codes: 0 ok, 1 internal error, 2 invalid input or infeasible problem.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("fracobs")

CONFIG_SCHEMA = 1

DEFAULT_CONFIG = {
    "schema_version": CONFIG_SCHEMA,
    "grid": {"n": 1, "s": 0.5, "x_box": 1.0, "y_max": 1.0, "nx": 257, "ny": 129},
    "obstacle": {
        "kind": "caps",
        "n": 1,
        "caps": [{"center": [0.0], "h0": 0.2, "kappa": 1.0, "rho": 0.6, "blend_width": 0.2}],
    },
    "solver": {"omega": None, "tol": 1e-10, "max_iters": 200000},
    "diagnostics": {"C0": 16.0, "gamma": 1.0, "r_hat": 0.25, "min_cells": 4.0, "density": 8.0},
    "classification": {"class_tol": 0.15, "contact_tol": None, "kernel_tol": 1e-3},
    "mc": {
        "dt": 1e-3,
        "n_paths": 100000,
        "max_time": 20.0,
        "support": 1.0,
        "points": [0.35, 0.5, 0.7],
        "fixed_times": [0.05, 0.3],
        "exterior": {"x_box": 1.5, "y_max": 1.5, "nx": 385, "ny": 193},
    },
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "obstacle":
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        user = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if user.get("schema_version", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {user.get('schema_version')!r}")
    return merge(DEFAULT_CONFIG, user)


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Set ``a.b.0.c`` style paths (integers index lists)."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node[k]
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return out


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def build_problem(cfg: dict):
    from .domain import build_grid, obstacle_from_dict
    from .lcp import SolverConfig, assemble_operator

    g = build_grid(**cfg["grid"])
    ob_cfg = dict(cfg["obstacle"])
    if ob_cfg.get("kind") == "three_caps":
        from .matrix import three_caps

        obstacle = None if ob_cfg.get("critical") else three_caps(float(ob_cfg["h_mid"]))
    else:
        ob_cfg.setdefault("n", g.n)
        ob_cfg.setdefault("x_box", g.x_box)
        obstacle = obstacle_from_dict(ob_cfg)
    sc = cfg["solver"]
    solver = SolverConfig(omega=sc.get("omega"), tol=sc.get("tol", 1e-10), max_iters=sc.get("max_iters", 200000))
    return g, assemble_operator(g), obstacle, solver


def solve_from_config(cfg: dict):
    """Solve the configured problem; the critical three-cap case runs the bisection."""
    from .lcp import solve_obstacle

    g, op, obstacle, solver = build_problem(cfg)
    if obstacle is not None:
        return solve_obstacle(op, obstacle, solver), obstacle, {}
    from .freeboundary import critical_height
    from .matrix import MIDDLE_REGION, three_caps

    ob_cfg = cfg["obstacle"]
    region = np.abs(g.xs) < MIDDLE_REGION
    lo, hi = ob_cfg.get("bracket", [1e-3, 0.2])
    bracket, field_ = critical_height(three_caps, op, region, lo, hi, solver)
    extra = {"bracket": {"below": bracket.below, "above": bracket.above, "evaluations": bracket.evaluations}}
    return field_, three_caps(bracket.above), extra


def diag_config(cfg: dict):
    from .diagnostics import DiagnosticsConfig

    return DiagnosticsConfig(**cfg["diagnostics"])


def fb_config(cfg: dict):
    from .freeboundary import FreeBoundaryConfig

    return FreeBoundaryConfig(**cfg["classification"])


def gnuplot_script(kind: str, files: list[str]) -> str:
    if kind == "trace":
        f = files[0]
        return (
            "set datafile separator ','\n"
            "set key autotitle columnhead\n"
            "set xlabel 'x'\n"
            f"plot '{f}' using 1:2 with lines title 'u', '{f}' using 1:3 with lines title 'phi'\n"
        )
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set logscale x",
        "set xlabel 'r'",
        "set multiplot layout 1,2",
        "set ylabel 'N'",
        "plot " + ", ".join(f"'{f}' using 1:7 with linespoints title '{Path(f).stem}'" for f in files),
        "set ylabel 'Phi'",
        "plot " + ", ".join(f"'{f}' using 1:8 with linespoints title '{Path(f).stem}'" for f in files),
        "unset multiplot",
    ]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_solve(cfg: dict, out: Path, args) -> list[Path]:
    from .io import trace_csv, write_field

    field_, obstacle, extra = solve_from_config(cfg)
    binp, side = write_field(out / "field.bin", field_, obstacle, extra)
    tr = out / "trace.csv"
    tr.write_text(trace_csv(field_, obstacle))
    gp = out / "trace.gp"
    gp.write_text(gnuplot_script("trace", [tr.name]))
    log.info("solved in %d sweeps, residual %.3e", field_.iterations, field_.residual_norm)
    return [binp, side, tr, gp]


def _load_field(cfg: dict, out: Path, args):
    from .domain import obstacle_from_dict
    from .io import read_field

    path = Path(args.field) if args.field else out / "field.bin"
    if not path.exists():
        raise ConfigError(f"missing field artifact {path}; run 'solve' first or pass --field")
    field_, side = read_field(path)
    ob = side.get("obstacle") or cfg["obstacle"]
    ob = dict(ob)
    ob.setdefault("x_box", field_.grid.x_box)
    return field_, obstacle_from_dict(ob)


def _report(cfg: dict, out: Path, args):
    from .freeboundary import analyze_free_boundary
    from .lcp import assemble_operator

    field_, obstacle = _load_field(cfg, out, args)
    op = assemble_operator(field_.grid)
    return analyze_free_boundary(field_, obstacle, op, diag_config(cfg), fb_config(cfg))


def cmd_analyze(cfg: dict, out: Path, args) -> list[Path]:
    report = _report(cfg, out, args)
    paths = []
    for pid, diag in sorted(report.diagnostics.items()):
        p = out / f"radial_point{pid:03d}.csv"
        p.write_text(diag.to_csv())
        paths.append(p)
    if paths:
        gp = out / "radial.gp"
        gp.write_text(gnuplot_script("radial", [p.name for p in paths]))
        paths.append(gp)
    return paths


def cmd_classify(cfg: dict, out: Path, args) -> list[Path]:
    report = _report(cfg, out, args)
    paths = []
    for pid, diag in sorted(report.diagnostics.items()):
        p = out / f"radial_point{pid:03d}.csv"
        p.write_text(diag.to_csv())
        paths.append(p)
    rp = out / "report.json"
    rp.write_text(report.to_json() + "\n")
    counts = report.counts()["classes"]
    log.info("free boundary points: %s", counts)
    return [rp] + paths


def cmd_mc(cfg: dict, out: Path, args) -> list[Path]:
    from .domain import obstacle_from_dict
    from .freeboundary import extract_contact_and_boundary
    from .stopping import (
        StableProcessConfig,
        estimate_value,
        estimates_to_csv,
        solve_exterior,
        stop_at_fixed_time,
        stop_immediately,
        stop_on_contact,
        trace_value,
    )

    mc = cfg["mc"]
    s = cfg["grid"]["s"]
    ext = mc["exterior"]
    ob_cfg = dict(cfg["obstacle"])
    ob_cfg["x_box"] = ext["x_box"]
    obstacle = obstacle_from_dict(ob_cfg)
    sol = solve_exterior(obstacle, s, mc["support"], ext["x_box"], ext["y_max"], ext["nx"], ext["ny"])
    masks = extract_contact_and_boundary(sol.field, obstacle)
    pcfg = StableProcessConfig(
        alpha=2.0 * s,
        dt=mc["dt"],
        n_paths=mc["n_paths"],
        max_time=mc["max_time"],
        support=mc["support"],
        rng_seed=int(cfg["seed"]),
        n=cfg["grid"]["n"],
    )
    strategies = [stop_on_contact(), stop_immediately()] + [stop_at_fixed_time(t) for t in mc["fixed_times"]]
    est = []
    pde = {}
    for x in mc["points"]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pde[tuple(x)] = float(trace_value(sol.field, x[None, :])[0])
        for st in strategies:
            est.append(estimate_value(sol.field, obstacle, pcfg, x, st, masks.contact))
    p = out / "estimates.csv"
    p.write_text(estimates_to_csv(est))
    q = out / "pde_values.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "u_pde"])
    for x, u in pde.items():
        w.writerow([repr(float(x[0])), repr(u)])
    q.write_text(buf.getvalue())
    return [p, q]


def parse_values(spec: str) -> list[float]:
    """``a:b:k`` (k evenly spaced values) or a comma list."""
    if ":" in spec:
        a, b, k = spec.split(":")
        return [float(v) for v in np.linspace(float(a), float(b), int(k))]
    return [float(v) for v in spec.split(",") if v.strip()]


def cmd_sweep(cfg: dict, out: Path, args) -> list[Path]:
    from .freeboundary import extract_contact_and_boundary

    if not args.param or not args.values:
        raise ConfigError("sweep needs --param and --values")
    values = parse_values(args.values)
    if args.param.startswith("obstacle."):
        # sweeping an obstacle parameter replaces any tuned height
        cfg = set_path(cfg, "obstacle.critical", False) if cfg["obstacle"].get("kind") == "three_caps" else cfg
    rows = []
    for v in values:
        c = set_path(cfg, args.param, v)
        f, obstacle, _ = solve_from_config(c)
        g = f.grid
        masks = extract_contact_and_boundary(f, obstacle)
        rows.append(
            {
                "value": v,
                "contact_nodes": int(np.count_nonzero(masks.contact)),
                "contact_measure": float(np.count_nonzero(masks.contact) * g.hx**g.n),
                "fb_nodes": int(np.count_nonzero(masks.boundary)),
                "iterations": f.iterations,
            }
        )
    # bracket: last value with the starting contact set and first value with more contact
    bracket = None
    base = rows[0]["contact_nodes"]
    for lo, hi in zip(rows[:-1], rows[1:]):
        if lo["contact_nodes"] == base and hi["contact_nodes"] > base:
            bracket = [lo["value"], hi["value"]]
            break
    p = out / "sweep.csv"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    p.write_text(buf.getvalue())
    q = out / "sweep.json"
    q.write_text(json.dumps({"param": args.param, "rows": rows, "bracket": bracket}, indent=2) + "\n")
    return [p, q]


def cmd_selftest(cfg: dict, out: Path, args) -> list[Path]:
    from .selftest import run_selftest

    results = run_selftest()
    p = out / "selftest.json"
    p.write_text(json.dumps([r.__dict__ for r in results], indent=2) + "\n")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    if not all(r.passed for r in results):
        raise SelftestFailed(f"{sum(not r.passed for r in results)} self-test checks failed")
    return [p]


class SelftestFailed(RuntimeError):
    pass


COMMANDS = {
    "solve": cmd_solve,
    "analyze": cmd_analyze,
    "classify": cmd_classify,
    "mc": cmd_mc,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracobs", description="Fractional obstacle problem laboratory.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration (defaults are used for missing keys)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument(
        "--threads", type=int, default=None, help="numba thread pool size (default: all cores); sweeps stay sequential"
    )
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    p.add_argument("--field", help="field artifact for analyze/classify")
    p.add_argument("--param", help="dotted config path swept by 'sweep'")
    p.add_argument("--values", help="'a:b:k' or comma list of sweep values")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    import numba

    threads = numba.config.NUMBA_NUM_THREADS
    if args.threads:
        threads = max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(threads)

    from .io import write_manifest
    from .lcp import NonConvergence

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, out, args)
        write_manifest(out, args.command, cfg, int(cfg["seed"]), outputs, threads)
    except (NonConvergence, SelftestFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError) as exc:
        # grid, obstacle, infeasible-boundary, artifact and schema errors are ValueErrors
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
