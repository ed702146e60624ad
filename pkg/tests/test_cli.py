import csv
import json
import subprocess
import sys

import pytest

from capalloc import reproduce
from capalloc.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from capalloc.config import load_config
from capalloc.runner import axiom_checks

SMALL_MC = """\
name = "small"
provenance = "test: three shifted lognormals"
seed = 9

[[portfolio.assets]]
type = "shifted_lognormal"
mu = 0.45
sigma = 0.5
target_mean = 0.2
count = 3

[measure]
kind = "VaR"
alpha = 0.99

[engine]
kind = "mc"
m = 20000
b = 40

[outputs]
files = ["report_csv", "batch"]
"""

SMALL_SWEEP = """\
name = "small_sweep"
provenance = "test: two Bernoulli-Pareto assets"

[[portfolio.assets]]
type = "bernoulli_pareto"
gamma = 5.0
target_mean = 0.2

[[portfolio.assets]]
type = "bernoulli_pareto"
gamma = 1.7
target_mean = 0.2

[engine]
kind = "mc"
m = 20000
b = 40

[sweep]
points = 5

[outputs]
files = ["figure"]
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_example1(tmp_path, capsys):
    assert main(["run", "example1", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "report.csv")
    assert [float(r["allocation"]) for r in rows] == [0.0, 100.0]
    man = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("command", "provenance", "config_sha256", "seed", "versions", "files", "wall_time_s"):
        assert key in man
    assert man["provenance"].startswith("Example 1")
    assert "wrote" in capsys.readouterr().out


def test_same_seed_same_bytes(tmp_path):
    cfg = _write(tmp_path, SMALL_MC)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(a), "--threads", "1"]) == EXIT_OK
    assert main(["run", cfg, "--out", str(b), "--threads", "3"]) == EXIT_OK
    for f in ("report.csv", "batch.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    c = tmp_path / "c"
    assert main(["run", cfg, "--out", str(c), "--seed", "10"]) == EXIT_OK
    assert (a / "report.csv").read_bytes() != (c / "report.csv").read_bytes()


def test_alloc_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ALLOC_OUT", str(tmp_path))
    assert main(["run", "example1"]) == EXIT_OK
    assert (tmp_path / "example1" / "report.csv").exists()


def test_config_error_exit(tmp_path, capsys):
    bad = _write(tmp_path, 'provenance = "x"\n[portfolio]\nassets = []\n')
    assert main(["run", bad, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "no assets" in capsys.readouterr().err
    assert main(["run", "no_such_scenario"]) == EXIT_CONFIG


def test_numerical_error_exit(tmp_path, capsys):
    text = SMALL_MC.replace('kind = "mc"', 'kind = "mcmc"\nvar_level = -100.0')
    assert main(["run", _write(tmp_path, text), "--out", str(tmp_path)]) == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        main(["run", "example1", "--seed", "-1"])


def test_sweep_writes_csv_and_png(tmp_path):
    assert main(["sweep", _write(tmp_path, SMALL_SWEEP), "--out", str(tmp_path)]) == EXIT_OK
    for tag in ("VaR", "ES", "VaR_ES"):
        rows = _rows(tmp_path / f"sweep_{tag}.csv")
        assert len(rows) == 5 and float(rows[0]["u"]) == 0.0
        assert (tmp_path / f"sweep_{tag}.png").stat().st_size > 0
    summary = json.loads((tmp_path / "manifest.json").read_text())["summary"]
    assert set(summary) == {"VaR", "ES", "VaR-ES"}


def test_axioms_example1(tmp_path):
    assert main(["axioms", "example1", "--out", str(tmp_path)]) == EXIT_OK
    rows = {r["check"]: r for r in _rows(tmp_path / "axioms.csv")}
    assert rows["subadditive"]["passed"] == "False"
    assert rows["positive_homogeneous"]["passed"] == "True"


def test_axiom_checks_es_clean():
    from capalloc.measures import RiskMeasure

    dist = load_config(reproduce.bundled_config_dir() / "example1.toml").distribution
    rows = axiom_checks(dist, RiskMeasure("ES-integral", 0.99))
    assert all(r["passed"] for r in rows if r["check"] != "allocation_monotone")


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "example5_mcmc" in out and "Example 5" in out


def test_reproduce_quick_subset(tmp_path):
    assert main(["reproduce", "--only", "1", "2", "9", "--quick", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "reproduce.csv")
    assert {r["criterion"] for r in rows} == {"1", "2", "9"}


def test_corrupted_config_fails_only_its_row(tmp_path, monkeypatch):
    for p in reproduce.bundled_config_dir().glob("*.toml"):
        (tmp_path / p.name).write_text(p.read_text())
    (tmp_path / "example4.toml").write_text("provenance = \n")
    monkeypatch.setattr(reproduce, "bundled_config_dir", lambda: tmp_path)
    results = reproduce.reproduce_all(only=[1, 4], quick=True, echo=None)
    by = {r.criterion: r for r in results}
    assert by[1].passed
    assert not by[4].passed and "ConfigError" in by[4].error


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "capalloc.cli", "run", "example1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "100" in proc.stdout
