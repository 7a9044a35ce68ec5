import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import EXAMPLE
from stratquant import RankScoreSpec, TiePolicy, __version__, exact_null, invert_confidence
from stratquant.cli import ingest_csv, main, resolve_threads
from stratquant.config import ConfigError, RunConfig, load_config
from stratquant.errors import InputError


def write_csv(path, rows, header="stratum,treated,outcome"):
    path.write_text(header + "\n" + "".join(f"{s},{t},{y}\n" for s, t, y in rows))
    return path


def example_rows():
    rows = []
    for s, (tr, co) in enumerate(EXAMPLE, start=1):
        rows += [(s, 1, v) for v in tr] + [(s, 0, v) for v in co]
    return rows


@pytest.fixture
def data(tmp_path):
    return write_csv(tmp_path / "data.csv", example_rows())


def run_cli(tmp_path, *args):
    out = tmp_path / "out"
    code = main([*map(str, args), "--out-dir", str(out)])
    return code, out


def test_ingest_matches_library_dataset(data, example):
    ds = ingest_csv(str(data))
    np.testing.assert_array_equal(ds.y, example.y)
    np.testing.assert_array_equal(ds.z, example.z)


@pytest.mark.parametrize(
    "body, message",
    [
        ("", "empty file"),
        ("stratum,treated,x\n", "unknown column 'x'"),
        ("stratum,treated,outcome\n", "empty dataset"),
        ("stratum,treated,outcome\n1,2,0.5\n", ":2: treated must be 0 or 1"),
        ("stratum,treated,outcome\n1,1,0.5\n1,0,abc\n", ":3: outcome 'abc'"),
        ("stratum,treated,outcome\n1,1,nan\n", "finite"),
        ("stratum,treated,outcome\n1,1\n", "expected 3 fields"),
    ],
)
def test_ingest_errors(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(InputError, match=message):
        ingest_csv(str(path))


def test_scre_run_matches_library(tmp_path, data, example, stephenson4):
    code, out = run_cli(tmp_path, "--data", data, "--score", "stephenson", "--h", 4, "--alpha", 0.1)
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    want = invert_confidence(example, stephenson4, TiePolicy.TREATED_FIRST, 0.1, exact_null(example, stephenson4))
    got = [q["lower_limit"] for q in doc["result"]["reports"][0]["quantiles"]]
    assert got == [None if np.isneginf(v) else float(v) for v in want.lower]
    with open(out / "limits.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in rows] == list(range(1, 19))
    assert doc["null"]["mode"] == "exact"
    assert set(doc["provenance"]) >= {"config_sha256", "data_sha256", "runtime_seconds"}


def test_config_file_and_flag_precedence(tmp_path, data):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# example\ndata = {data}\nscore = stephenson\nh = 4\nalpha = 0.2\n")
    code, out = run_cli(tmp_path, "--config", cfg, "--alpha", 0.05)
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["config"]["alpha"] == 0.05 and doc["config"]["h"] == [4]


def test_config_errors_carry_line_numbers(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("alpha = 0.1\n\nmethod = simplex\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:3: method"):
        load_config(str(cfg))
    cfg.write_text("nonsense\n")
    with pytest.raises(ConfigError, match=r":1: expected key = value"):
        load_config(str(cfg))
    cfg.write_text("colour = red\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(str(cfg))


def test_invalid_input_exits_2(tmp_path, data, capsys):
    assert run_cli(tmp_path, "--data", tmp_path / "missing.csv")[0] == 2
    assert run_cli(tmp_path, "--data", data, "--alpha", 1.5)[0] == 2
    assert run_cli(tmp_path, "--data", data, "--policy", "first")[0] == 2
    assert "tie_seed" in capsys.readouterr().err


def test_budget_exceeded_exits_3(tmp_path, data):
    assert run_cli(tmp_path, "--data", data, "--budget", 10)[0] == 3
    code, out = run_cli(tmp_path, "--data", data, "--budget", 10, "--mc-seed", 1, "--mc-reps", 2000)
    assert code == 0
    assert json.loads((out / "report.json").read_text())["null"]["mode"] == "mc"


def test_policy_first_with_seed_is_reproducible(tmp_path, data):
    a = run_cli(tmp_path / "a", "--data", data, "--policy", "first", "--tie-seed", 4)
    b = run_cli(tmp_path / "b", "--data", data, "--policy", "first", "--tie-seed", 4)
    assert a[0] == b[0] == 0
    assert (a[1] / "limits.csv").read_text() == (b[1] / "limits.csv").read_text()


def test_two_sided(tmp_path, data):
    code, out = run_cli(tmp_path, "--data", data, "--analysis", "two_sided", "--quantiles", "9,18", "--c", 0.5)
    assert code == 0
    tests = json.loads((out / "report.json").read_text())["result"]["two_sided"]
    assert [t["k"] for t in tests] == [9, 18]
    for t in tests:
        assert t["reject"] == (min(t["p_right"], t["p_left"]) <= 0.05)
    assert run_cli(tmp_path, "--data", data, "--analysis", "two_sided")[0] == 2


def test_sensitivity_run(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for s in range(20):
        rows += [(s, 1, float(rng.integers(2, 9))), (s, 0, float(rng.integers(0, 5)))]
    data = write_csv(tmp_path / "pairs.csv", rows)
    code, out = run_cli(
        tmp_path, "--data", data, "--analysis", "sensitivity", "--gamma", "2,1",
        "--quantiles", "30", "--threads", 2,
    )
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["result"]["tail"] == "finite"
    assert [r["gamma"] for r in doc["result"]["reports"]] == [1.0, 2.0]
    with open(out / "limits.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["k", "lower_limit", "gamma"]
    assert len(rows) == 80


def test_sensitivity_rejects_unmatched_sets(tmp_path, data):
    assert run_cli(tmp_path, "--data", data, "--analysis", "sensitivity")[0] == 2


def test_custom_scores_flag(tmp_path, data):
    code, _ = run_cli(tmp_path, "--data", data, "--score", "custom", "--scores", "6=0,0,1,2,4,8")
    assert code == 0
    assert run_cli(tmp_path, "--data", data, "--score", "custom", "--scores", "6")[0] == 2


def test_threads_precedence(monkeypatch):
    cfg = RunConfig(threads=3)
    monkeypatch.delenv("STRATQUANT_THREADS", raising=False)
    assert resolve_threads(cfg, from_flag=False) == 3
    monkeypatch.setenv("STRATQUANT_THREADS", "5")
    assert resolve_threads(cfg, from_flag=False) == 5
    assert resolve_threads(cfg, from_flag=True) == 3
    monkeypatch.setenv("STRATQUANT_THREADS", "zero")
    with pytest.raises(ConfigError):
        resolve_threads(cfg, from_flag=False)


def test_digest_ignores_out_dir_and_threads():
    a, b = RunConfig(data="x.csv"), RunConfig(data="x.csv", out_dir="elsewhere", threads=8)
    assert a.digest() == b.digest()
    assert a.digest() != RunConfig(data="x.csv", alpha=0.2).digest()


def test_help_and_version():
    res = subprocess.run([sys.executable, "-m", "stratquant", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run([sys.executable, "-m", "stratquant", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "--gamma" in res.stdout and "Exit codes" in res.stdout
