import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from shadowgrid.cli import EXIT_CONFIG, EXIT_IO, EXIT_NO_TRIALS, EXIT_OK, main
from shadowgrid.cloud_io import read_cloud, write_cloud
from shadowgrid.harness import read_records


def _config_file(tmp_path, **extra):
    d = {"scene": {"kind": "roadway"}, "locations": 2, "trials_per_location": 2, "master_seed": 5, **extra}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


@pytest.fixture
def pair(tmp_path):
    out = tmp_path / "pair"
    assert main(["simulate", "--scene", "roadway", "--location", "3", "--trial", "1", "--out-dir", str(out)]) == 0
    return out


def test_simulate_writes_pair_scene_and_truth(pair):
    A, seed = read_cloud(pair / "primary.ply")
    B, _ = read_cloud(pair / "secondary.ply")
    assert len(A) > 1000 and len(B) > 1000
    assert seed == "0/3/1"
    truth = json.loads((pair / "truth.json").read_text())["secondary_to_primary"]
    assert truth["x"] == pytest.approx(-0.5)
    assert json.loads((pair / "scene.json").read_text())["kind"] == "roadway"


def test_simulate_csv_matches_ply(tmp_path):
    assert main(["simulate", "--format", "csv", "--out-dir", str(tmp_path / "c")]) == 0
    assert main(["simulate", "--format", "ply", "--out-dir", str(tmp_path / "p")]) == 0
    a, _ = read_cloud(tmp_path / "c" / "primary.csv")
    b, _ = read_cloud(tmp_path / "p" / "primary.ply")
    assert np.array_equal(a, b)


def test_match_recovers_truth(pair, capsys, tmp_path):
    out = tmp_path / "sol.json"
    code = main(["match", str(pair / "primary.ply"), str(pair / "secondary.ply"), "-o", str(out)])
    assert code == EXIT_OK
    sol = json.loads(capsys.readouterr().out)
    assert sol == json.loads(out.read_text())
    truth = json.loads((pair / "truth.json").read_text())["secondary_to_primary"]
    assert sol["converged"]
    assert abs(sol["state"]["x"] - truth["x"]) < 5 * sol["predicted_sigma"]["x"]


@pytest.mark.parametrize("method", ["cartesian", "cartesian_no_ground"])
def test_match_other_methods(pair, capsys, method):
    assert main(["match", "--method", method, str(pair / "primary.ply"), str(pair / "secondary.ply")]) == 0
    assert "state" in json.loads(capsys.readouterr().out)


def test_montecarlo_then_report(tmp_path, capsys):
    out = tmp_path / "mc"
    assert main(["montecarlo", "--config", str(_config_file(tmp_path)), "--out-dir", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "Actual" in text and "Predicted" in text
    records, meta = read_records(out / "records.csv")
    assert len(records) == 4 and meta["master_seed"] == "5"
    assert (out / "summary.txt").exists() and (out / "summary.csv").exists()
    json.loads((out / "config.json").read_text())

    prefix = tmp_path / "rep" / "table"
    prefix.parent.mkdir()
    assert main(["report", str(out / "records.csv"), "-o", str(prefix)]) == EXIT_OK
    for suffix in (".txt", ".csv", ".svg"):
        assert prefix.with_name("table" + suffix).stat().st_size > 0
    rows = list(csv.DictReader(open(prefix.with_name("table.csv"))))
    assert rows[0]["config_hash"] == meta["config_hash"]


def test_montecarlo_is_byte_reproducible(tmp_path):
    cfg = _config_file(tmp_path)
    for name in ("a", "b"):
        assert main(["montecarlo", "--config", str(cfg), "--out-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


def test_zero_accepted_trials_exit_code(tmp_path):
    cfg = _config_file(tmp_path, match={"max_iterations": 1})
    assert main(["montecarlo", "--config", str(cfg), "--out-dir", str(tmp_path / "mc")]) == EXIT_NO_TRIALS
    assert (tmp_path / "mc" / "records.csv").exists()


def test_match_failure_exit_code(tmp_path):
    write_cloud(tmp_path / "a.csv", np.random.default_rng(0).normal(size=(20, 3)))
    with pytest.warns(RuntimeWarning, match="unobservable"):
        assert main(["match", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")]) == EXIT_NO_TRIALS


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["simulate", "--scene", "moon"],
    ["montecarlo", "--method", "icp"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_config_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["montecarlo", "--config", str(bad)]) == EXIT_CONFIG
    unknown = _config_file(tmp_path, bogus_key=1)
    assert main(["montecarlo", "--config", str(unknown)]) == EXIT_CONFIG
    assert main(["simulate", "--location", "9999", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_io_errors_exit_2(tmp_path, capsys):
    assert main(["match", str(tmp_path / "none.ply"), str(tmp_path / "none.ply")]) == EXIT_IO
    assert "none.ply" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing.csv")]) == EXIT_IO
    garbage = tmp_path / "g.ply"
    garbage.write_bytes(b"garbage")
    assert main(["match", str(garbage), str(garbage)]) == EXIT_IO
    assert main(["montecarlo", "--config", str(tmp_path / "nofile.json")]) == EXIT_IO


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "shadowgrid.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "match", "montecarlo", "report"):
        assert cmd in res.stdout
