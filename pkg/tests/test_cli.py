import json
import subprocess
import sys

import pytest

from fracobs.cli import DEFAULT_CONFIG, load_config, main, merge, parse_values, set_path

SMALL = {"grid": {"nx": 129, "ny": 65}}


def write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_config_merge_and_paths():
    cfg = merge(DEFAULT_CONFIG, {"grid": {"nx": 65}})
    assert cfg["grid"]["nx"] == 65 and cfg["grid"]["s"] == DEFAULT_CONFIG["grid"]["s"]
    cfg2 = set_path(cfg, "obstacle.caps.0.h0", 0.3)
    assert cfg2["obstacle"]["caps"][0]["h0"] == 0.3 and cfg["obstacle"]["caps"][0]["h0"] == 0.2
    assert parse_values("0:1:3") == [0.0, 0.5, 1.0]
    assert parse_values("0.1,0.2") == [0.1, 0.2]


def test_solve_writes_artifacts_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    for name in ("field.bin", "field.bin.json", "trace.csv", "manifest_solve.json"):
        assert (out / name).exists()
    man = json.loads((out / "manifest_solve.json").read_text())
    assert man["config"]["grid"]["nx"] == 129
    assert set(man["outputs"]) >= {"field.bin", "trace.csv"}
    assert "numpy" in man["versions"]


def test_solve_is_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL)
    for k in range(2):
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / f"o{k}")]) == 0
    for name in ("field.bin", "field.bin.json", "trace.csv", "manifest_solve.json"):
        assert (tmp_path / "o0" / name).read_bytes() == (tmp_path / "o1" / name).read_bytes()


def test_infeasible_boundary_exit_code(tmp_path, capsys):
    cfg = dict(SMALL, obstacle={"kind": "constant", "value": 0.1})
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "boundary" in capsys.readouterr().err


@pytest.mark.parametrize(
    "cfg",
    [
        {"grid": {"nx": 10}},
        {"grid": {"s": 1.5}},
        {"schema_version": 7},
        {"obstacle": {"kind": "caps", "caps": [{"center": [0.0], "h0": 0.5, "kappa": 1.0, "rho": 0.6, "blend_width": 0.2}]}},
        {"solver": {"omega": 2.5}},
    ],
)
def test_invalid_input_exit_code(tmp_path, cfg):
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_and_artifact(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert main(["classify", "--out", str(tmp_path / "empty")]) == 2


def test_schema_mismatch_in_sidecar(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    side = json.loads((out / "field.bin.json").read_text())
    side["schema_version"] = 42
    (out / "field.bin.json").write_text(json.dumps(side))
    assert main(["classify", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 2


def test_nonconvergence_exit_code(tmp_path):
    cfg = dict(SMALL, solver={"max_iters": 25})
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1


def test_classify_negative_obstacle_is_empty(tmp_path):
    cfg = write(tmp_path, dict(SMALL, obstacle={"kind": "constant", "value": -0.1}))
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert main(["classify", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["points"] == [] and rep["summary"]["classes"]["Singular"] == 0


def test_analyze_and_classify_outputs(tmp_path):
    cfg = write(tmp_path, {"grid": {"nx": 257, "ny": 129}})
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert main(["analyze", "--config", cfg, "--out", str(out)]) == 0
    assert main(["classify", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert [p["label"] for p in rep["points"]] == ["Regular", "Regular"]
    for p in rep["points"]:
        csv = out / f"radial_point{p['point_id']:03d}.csv"
        assert csv.read_text().startswith("r,H,G,D,I,I_bulk,N,Phi,W")
    assert "plot" in (out / "radial.gp").read_text()


def test_sweep_monotone_with_bracket(tmp_path):
    cfg = write(tmp_path, {"grid": {"nx": 129, "ny": 65}, "obstacle": {"kind": "three_caps", "critical": True}})
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--param", "obstacle.h_mid", "--values", "0.05:0.075:6"]) == 0
    table = json.loads((out / "sweep.json").read_text())
    lengths = [r["contact_measure"] for r in table["rows"]]
    assert all(b >= a for a, b in zip(lengths, lengths[1:]))
    lo, hi = table["bracket"]
    assert lo < 0.0614 < hi
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 2


def test_mc_writes_estimates(tmp_path):
    cfg = {
        "mc": {"n_paths": 2000, "points": [0.5], "fixed_times": [0.05], "exterior": {"nx": 97, "ny": 49}},
    }
    out = tmp_path / "o"
    assert main(["mc", "--config", write(tmp_path, cfg), "--out", str(out), "--seed", "3"]) == 0
    lines = (out / "estimates.csv").read_text().splitlines()
    assert lines[0] == "x0,strategy,J,SE,truncated" and len(lines) == 4
    assert json.loads((out / "manifest_mc.json").read_text())["seed"] == 3


def test_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "fracobs.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "selftest" in r.stdout


def test_load_default_config():
    assert load_config(None) == DEFAULT_CONFIG
