import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from logldp import cli
from logldp.config import config_hash, resolve
from logldp.io import read_table, sha256_file

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = {
    "domain": {"L": 3.141592653589793, "n_modes": 8},
    "solver": {"dt": 0.001, "T": 0.1},
    "control": {"K": 5, "value": 0.5},
    "ensemble": {"n_paths": 40, "eps": [0.2, 0.1], "chunk_size": 16},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(tmp_path, experiment, cfg, out="out", *extra):
    out_dir = tmp_path / out
    code = cli.main([experiment, "--config", _write(tmp_path, cfg), "--output", str(out_dir), *extra])
    return code, out_dir


def _manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text())


@pytest.mark.parametrize("experiment", ["skeleton", "simulate", "condition-a", "condition-b", "convergence-study"])
def test_experiments_exit_zero_with_hashed_manifest(tmp_path, experiment):
    cfg = dict(SMALL)
    if experiment == "convergence-study":
        cfg["solver"] = {"T": 0.1}
        cfg["convergence"] = {"dt_list": [0.002, 0.001, 0.0005]}
    if experiment == "condition-b":
        cfg["condition_b"] = {"eps": [0.1, 0.05]}
    code, out = _run(tmp_path, experiment, cfg)
    assert code == 0
    man = _manifest(out)
    assert man["status"] == "ok" and man["experiment"] == experiment
    assert man["config_hash"] == config_hash(man["config"])
    assert man["config"] == resolve({**cfg, "experiment": experiment, "output_dir": str(out)})
    assert man["files"]
    for f in man["files"]:
        assert sha256_file(out / f["path"]) == f["sha256"]
    main = read_table(out / man["main_table"])
    assert list(main[0]) == cli.COLUMNS.get(man["main_table"][:-4], list(main[0]))


def test_rate_function_and_mc_small(tmp_path):
    cfg = json.loads((CONFIGS / "mc_estimate.json").read_text())
    cfg["mc"] = {"n_paths": 2000, "eps": [0.4, 0.3]}
    cfg["optimizer"].update(n_starts=2, check_gradients=True)
    code, out = _run(tmp_path, "mc-estimate", cfg)
    assert code == 0
    man = _manifest(out)
    assert man["results"]["feasible"] and man["results"]["gradient_check_max_rel_err"] < 1e-5
    rows = read_table(out / "mc_estimate.csv")
    assert list(rows[0]) == cli.COLUMNS["mc_estimate"]
    assert list(read_table(out / "h_star.csv")[0]) == cli.COLUMNS["h_star"]


def test_infeasible_exits_three(tmp_path):
    cfg = {"sigma": {"kind": "constant", "value": 0.0}, "solver": {"dt": 0.001, "T": 0.1},
           "target": {"kind": "terminal_norm_above", "r": 100.0}, "optimizer": {"K": 10, "n_starts": 1}}
    code, out = _run(tmp_path, "rate-function", cfg)
    assert code == 3
    man = _manifest(out)
    assert man["status"] == "failed" and man["reason"] == "infeasible"


def test_overflow_exits_three(tmp_path):
    cfg = {"domain": {"L": 1.0, "n_modes": 4}, "initial": {"coeffs": [500.0]},
           "solver": {"dt": 0.05, "T": 1.0, "oracle_mode": "reaction_only", "overflow_guard": 1e6},
           "control": {"K": 1}}
    code, out = _run(tmp_path, "skeleton", cfg)
    assert code == 3
    assert _manifest(out)["reason"] == "overflow"


@pytest.mark.parametrize("cfg", [
    {"solver": {"dt": -0.1}},
    {"solver": {"dt": 0.001, "T": 0.1}, "control": {"K": 7}},
    {"bogus": 1},
    {"experiment": "simulate"},
    {"initial": {"coeffs": [1.0] * 40}},
    {"sigma": {"kind": "table", "table": "/nonexistent.csv"}},
], ids=["neg-dt", "K-not-dividing", "unknown-key", "wrong-experiment", "too-many-coeffs", "missing-table"])
def test_invalid_config_exits_two_without_output(tmp_path, cfg):
    code, out = _run(tmp_path, "skeleton", cfg)
    assert code == 2
    assert not out.exists()


def test_cli_argument_errors(tmp_path, capsys):
    assert cli.main(["skeleton", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["skeleton", "--config", str(bad)]) == 2
    good = _write(tmp_path, SMALL)
    assert cli.main(["skeleton", "--config", good, "--threads", "0", "--output", str(tmp_path / "o")]) == 2
    assert cli.main(["skeleton", "--config", good, "--seed", "-1"]) == 2
    assert cli.main(["nonsense"]) == 2
    assert cli.main(["report", str(tmp_path / "nowhere")]) == 2


def test_threads_byte_identical(tmp_path):
    cfg = dict(SMALL)
    a = _run(tmp_path, "simulate", cfg, "t1", "--threads", "1")[1]
    b = _run(tmp_path, "simulate", cfg, "t8", "--threads", "8")[1]
    for name in ("phi_moment.csv", "paths.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = _manifest(a), _manifest(b)
    assert [f["sha256"] for f in ma["files"]] == [f["sha256"] for f in mb["files"]]


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("LOGLDP_THREADS", "3")
    code, out = _run(tmp_path, "skeleton", SMALL)
    assert code == 0 and _manifest(out)["threads"] == 3


def test_seed_override(tmp_path):
    cfg = dict(SMALL)
    a = _run(tmp_path, "simulate", cfg, "s1", "--seed", "5")[1]
    b = _run(tmp_path, "simulate", cfg, "s2", "--seed", "6")[1]
    assert _manifest(a)["seeds"]["base_seed"] == 5
    assert (a / "paths.csv").read_bytes() != (b / "paths.csv").read_bytes()


def test_heat_only_oracle_through_cli(tmp_path):
    cfg = {"domain": {"L": 1.0, "n_modes": 8}, "solver": {"dt": 0.001, "T": 0.5, "oracle_mode": "heat_only"},
           "control": {"K": 5, "value": 0.0}}
    code, out = _run(tmp_path, "skeleton", cfg)
    man = _manifest(out)
    assert code == 0 and man["results"]["oracle_max_error"] < 1e-8
    assert man["contracts"]["uniform_bound_dominates"]
    header = (out / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert header == ["t"] + [f"coeff_{i}" for i in range(1, 9)]


def test_verify_inequalities_default_grid(tmp_path):
    cfg = {"domain": {"L": 1.0, "n_modes": 16, "n_quad": 64}, "inequalities": {"n_fields": 50}}
    code, out = _run(tmp_path, "verify-inequalities", cfg)
    man = _manifest(out)
    assert code == 0 and man["contracts"]["all_gaps_above_tolerance"]
    rows = read_table(out / "inequalities.csv")
    assert list(rows[0]) == cli.COLUMNS["inequalities"]


def test_simulate_dump_paths(tmp_path):
    cfg = {**SMALL, "ensemble": {**SMALL["ensemble"], "n_paths": 3, "dump_paths": True}}
    code, out = _run(tmp_path, "simulate", cfg)
    assert code == 0
    assert len(list((out / "paths").glob("*.bin"))) == 6
    small = {**SMALL, "ensemble": {**SMALL["ensemble"], "n_paths": 3, "dump_paths": True, "max_dump_values": 10}}
    code, out = _run(tmp_path, "simulate", small, "o2")
    assert code == 0 and not (out / "paths").exists()
    assert _manifest(out)["results"]["dump_skipped"] == [0.2, 0.1]


def test_report(tmp_path):
    code, out = _run(tmp_path, "condition-a", SMALL)
    buf = io.StringIO()
    assert cli.report(out, stream=buf) == 0
    text = buf.getvalue()
    assert "experiment: condition-a" in text and "condition_a.csv" in text
    assert "PASS" in text or "FAIL" in text


def test_console_script(tmp_path):
    cfg = _write(tmp_path, SMALL)
    res = subprocess.run([sys.executable, "-m", "logldp.cli", "skeleton", "--config", cfg,
                          "--output", str(tmp_path / "sub")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "logldp.cli", "report", str(tmp_path / "sub")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "status: ok" in res.stdout
