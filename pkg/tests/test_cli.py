"""End-to-end command-line runs: exit codes, artifacts, determinism."""

import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
BURGERS = ROOT / "configs" / "burgers_sin.json"
TANH = ROOT / "configs" / "burgers_tanh.json"


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "charstoch", *args],
        capture_output=True, text=True, cwd=ROOT,
    )


def error_payload(proc):
    line = proc.stderr.strip().splitlines()[-1]
    return json.loads(line)["error"]


def test_blowup_artifacts(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("blowup", "--config", str(BURGERS), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    report = json.loads((out / "blowup.json").read_text())
    assert report["t_star"] == pytest.approx(1.0, abs=1e-3)
    assert report["method"] == "conway"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "blowup"
    assert manifest["version"]
    assert len(manifest["spec_digest"]) == 64
    entries = {o["path"]: o["sha256"] for o in manifest["outputs"]}
    assert set(entries) == {"blowup.json"}
    assert all(len(h) == 64 for h in entries.values())


def test_blowup_infinite_time(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("blowup", "--config", str(TANH), "--out", str(out))
    assert proc.returncode == 0
    assert json.loads((out / "blowup.json").read_text())["t_star"] == "inf"


def test_missing_config_exits_2(tmp_path):
    proc = run_cli("blowup", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o"))
    assert proc.returncode == 2
    err = error_payload(proc)
    assert err["kind"] == "ConfigError"
    assert "nope.json" in err["message"]


def test_invalid_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"n": 1, "a": ["u"]}')
    proc = run_cli("blowup", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert proc.returncode == 2
    assert error_payload(proc)["kind"] == "SchemaError"


def test_numerical_precondition_exits_3(tmp_path):
    proc = run_cli("converge", "--config", str(BURGERS),
                   "--out", str(tmp_path / "o"),
                   "--sigmas", "0.2,0.1", "--t", "1.5")
    assert proc.returncode == 3
    assert error_payload(proc)["kind"] == "NearBlowup"


def test_solve_characteristics_past_blowup_exits_3(tmp_path):
    proc = run_cli("solve", "--config", str(BURGERS),
                   "--out", str(tmp_path / "o"),
                   "--method", "characteristics", "--t", "1.5")
    assert proc.returncode == 3
    assert error_payload(proc)["kind"] == "NearBlowup"


def test_solve_quadrature_rejects_unlisted_time(tmp_path):
    proc = run_cli("solve", "--config", str(BURGERS),
                   "--out", str(tmp_path / "o"),
                   "--method", "quadrature", "--t", "0.33")
    assert proc.returncode == 2
    assert error_payload(proc)["kind"] == "ValueError"


def test_solve_quadrature_writes_field_grids(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("solve", "--config", str(BURGERS), "--out", str(out),
                   "--method", "quadrature", "--t", "0.5")
    assert proc.returncode == 0, proc.stderr
    for which in ("rho", "u", "a"):
        lines = (out / f"fields_sigma_t0_{which}.csv").read_text().splitlines()
        assert lines[0] == "t,x1,value,valid"
        assert len(lines) == 42


def test_solve_characteristics_at_t0_returns_initial_profile(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("solve", "--config", str(BURGERS), "--out", str(out),
                   "--method", "characteristics", "--t", "0")
    assert proc.returncode == 0, proc.stderr
    rows = (out / "fields_char_t0_u.csv").read_text().splitlines()[1:]
    for row in rows:
        cells = row.split(",")
        assert float(cells[2]) == pytest.approx(math.sin(float(cells[1])),
                                                abs=1e-12)


def test_montecarlo_solve_is_byte_deterministic(tmp_path):
    args = ("solve", "--config", str(BURGERS), "--method", "montecarlo",
            "--t", "0.5", "--particles", "20000", "--dump-particles")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(*args, "--out", str(out1)).returncode == 0
    assert run_cli(*args, "--out", str(out2)).returncode == 0
    for name in ("fields_mc_t0_rho.csv", "fields_mc_t0_u.csv",
                 "particles_t0.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    m1 = json.loads((out1 / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m1["outputs"] == m2["outputs"]


def test_seed_override_changes_samples(tmp_path):
    base = ("solve", "--config", str(BURGERS), "--method", "montecarlo",
            "--t", "0.5", "--particles", "5000")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(*base, "--out", str(out1)).returncode == 0
    assert run_cli(*base, "--out", str(out2), "--seed", "7").returncode == 0
    a = (out1 / "fields_mc_t0_rho.csv").read_bytes()
    b = (out2 / "fields_mc_t0_rho.csv").read_bytes()
    assert a != b


def test_converge_table_decreases(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("converge", "--config", str(BURGERS), "--out", str(out),
                   "--sigmas", "0.2,0.1", "--t", "0.5")
    assert proc.returncode == 0, proc.stderr
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "sigma,max_err_u,max_err_a,max_err_rho"
    rows = [list(map(float, ln.split(","))) for ln in lines[1:]]
    assert rows[0][0] == 0.2 and rows[1][0] == 0.1
    assert rows[1][1] < rows[0][1]


def test_residuals_table_with_ratios(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("residuals", "--config", str(BURGERS), "--out", str(out),
                   "--system", "sigma", "--window", "0.3", "0.5",
                   "--resolutions", "0.08:0.032", "0.04:0.016")
    assert proc.returncode == 0, proc.stderr
    lines = (out / "residuals.csv").read_text().splitlines()
    assert lines[0] == "equation,h,dt,max_residual,l1_residual,ratio"
    assert len(lines) == 7
    coarse = [ln for ln in lines[1:4]]
    fine = [ln for ln in lines[4:]]
    assert all(ln.endswith(",") for ln in coarse)
    for ln in fine:
        ratio = float(ln.split(",")[-1])
        assert 2.5 <= ratio <= 6.0


def test_iterms_table(tmp_path):
    out = tmp_path / "run"
    proc = run_cli("iterms", "--config", str(BURGERS), "--out", str(out),
                   "--sigmas", "0.2,0.1", "--t", "0.5")
    assert proc.returncode == 0, proc.stderr
    lines = (out / "iterms.csv").read_text().splitlines()
    assert lines[0] == "sigma,I_u_sup,I_a_sup_1"
    vals = [list(map(float, ln.split(","))) for ln in lines[1:]]
    assert vals[0][1] > vals[1][1] > 0.0


def test_bad_flag_values_exit_2(tmp_path):
    proc = run_cli("iterms", "--config", str(BURGERS),
                   "--out", str(tmp_path / "o"),
                   "--sigmas", "0.2,zebra", "--t", "0.5")
    assert proc.returncode == 2
    proc = run_cli("residuals", "--config", str(BURGERS),
                   "--out", str(tmp_path / "o"),
                   "--system", "sigma", "--window", "0.3", "0.5",
                   "--resolutions", "0.08-0.032")
    assert proc.returncode == 2
    proc = run_cli("blowup", "--config", str(BURGERS),
                   "--out", str(tmp_path / "o"), "--threads", "0")
    assert proc.returncode == 2
