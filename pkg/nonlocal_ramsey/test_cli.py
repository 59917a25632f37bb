import csv
import json

import pytest

from nonlocal_ramsey.cli import EXIT_IO, main, parse_config, run
from nonlocal_ramsey.errors import ConfigError


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.mark.parametrize(
    "text, message",
    [
        ("mode = solve\nmu = 0.3\n", "mu must satisfy 0 < mu < epsilon"),
        ("h = 0.1\n", "missing mode"),
        ("mode = solve\nxi = 0\n", "xi: Input should be greater than 0"),
        ("mode = solve\nfoo = 1\n", "unknown key 'foo'"),
        ("mode = solve\nmode = optimize\n", "duplicate key 'mode'"),
        ("mode solve\n", "expected 'key = value'"),
        ("mode = solve\ntheta = 1\n", "theta must lie in (0, 1)"),
        ("mode = solve\nx1_min = 1\nx1_max = 0\n", "x1_max must exceed x1_min"),
        ("mode = solve\nc_init = 2\n", "c_init must lie in [c_min, c_max]"),
        ("mode = sweep\nsweep_param = mode\nsweep_values = 1\n", "sweep_param must name a numeric key"),
        ("mode = sweep\nsweep_param = a0\nsweep_values = 1\n", "sweep_param must name a numeric key"),
        ("mode = sweep\nsweep_param = sweep_values\nsweep_values = 1\n", "sweep_param must name a numeric key"),
        ("mode = sweep\nsweep_param = dim\nsweep_values = 2\n", "sweep_param must name a numeric key"),
    ],
)
def test_parse_config_errors(text, message):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert message in str(info.value)


def test_parse_config_comments_and_defaults():
    config = parse_config("# full line comment\n\nmode = solve   # trailing comment\nMp = 2.5\n")
    assert config.mode == "solve"
    assert config.h == 0.05
    assert config.sigma is None
    assert config.resolved_c_max == 2.5
    assert config.k0 == "gaussian 1 0.2"


def test_sweep_values_accept_commas_and_spaces():
    config = parse_config("mode = sweep\nsweep_param = beta\nsweep_values = 0.5, 1.0 2\n")
    assert config.sweep_values == [0.5, 1.0, 2.0]
    assert config.sweep_mode == "solve"


def test_verify_kernel(tmp_path, capsys):
    config = write_config(tmp_path, "mode = verify-kernel\nh = 0.05\n")
    assert main(["--config", str(config), "--out", str(tmp_path / "out")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5
    assert all(line.endswith("PASS") for line in lines)
    payload = json.loads((tmp_path / "out" / "kernel_report.json").read_text())
    assert [entry["property"] for entry in payload] == [1, 2, 3, 4, 5]


def test_verify_calculus(tmp_path, capsys):
    config = write_config(tmp_path, "mode = verify-calculus\nh = 0.1\nsamples = 20\n")
    assert main(["--config", str(config), "--out", str(tmp_path / "out"), "--seed", "7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5
    assert all(line.endswith("PASS") for line in lines)
    operator = (tmp_path / "out" / "operator.coo").read_text().splitlines()
    assert len(operator[0].split()) == 3
    report = json.loads((tmp_path / "out" / "calculus_report.json").read_text())
    assert 0.0 < report["c1"] <= report["c2"]


ZERO_SOLVE = """
mode = solve
a0 = constant 0
k0 = constant 0
kT = constant 0
steps = 10
"""


def test_solve_zero_instance(tmp_path, capsys):
    config = write_config(tmp_path, ZERO_SOLVE)
    assert main(["--config", str(config), "--out", str(tmp_path / "out")]) == 0
    out = tmp_path / "out"
    for name in ("grid.csv", "trajectory.csv", "control.csv", "picard_report.json", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["objective"] == 0.0
    assert summary["min_k"] == 0.0
    with open(out / "trajectory.csv", newline="") as handle:
        assert all(float(row["k"]) == 0.0 for row in csv.DictReader(handle))
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("picard contraction:")
    assert lines[1].startswith("a-priori estimate:") and lines[1].endswith("PASS")


def test_solve_is_deterministic(tmp_path):
    config = parse_config("mode = solve\nsteps = 10\nc_init = 0.1\n")
    run(config, tmp_path / "first")
    run(config, tmp_path / "second")
    for name in ("trajectory.csv", "picard_report.json", "summary.json"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


@pytest.mark.slow
def test_oracle_check(tmp_path):
    result = run(parse_config("mode = oracle-check\nc_init = 0.1\nseed = 3\n"), tmp_path)
    assert result.exit_code == 0
    assert 1.7 <= result.metrics["ratio"] <= 2.3
    report = json.loads((tmp_path / "oracle_report.json").read_text())
    assert len(report["points"]) == 5


@pytest.mark.slow
def test_optimize_reaches_the_upper_bound(tmp_path):
    config = parse_config("mode = optimize\nh = 0.1\nsteps = 10\nrho = 1e6\nk0 = constant 2\nc_init = 0.2\n")
    result = run(config, tmp_path)
    assert result.exit_code == 0
    assert result.metrics["projected_gradient"] == 0.0
    with open(tmp_path / "control.csv", newline="") as handle:
        assert all(float(row["c"]) == 1.0 for row in csv.DictReader(handle))
    trace = json.loads((tmp_path / "trace.json").read_text())
    objectives = [entry["objective"] for entry in trace["entries"]]
    assert all(b < a for a, b in zip(objectives, objectives[1:]))


def test_sweep(tmp_path):
    config = parse_config(ZERO_SOLVE.replace("mode = solve", "mode = sweep") + "sweep_param = beta\n"
                          "sweep_values = 0.5, 1.0\n")
    result = run(config, tmp_path)
    assert result.exit_code == 0
    assert (tmp_path / "000_beta" / "summary.json").exists()
    assert (tmp_path / "001_beta" / "summary.json").exists()
    with open(tmp_path / "sweep.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [float(row["beta"]) for row in rows] == [0.5, 1.0]
    assert all(row["exit_code"] == "0" for row in rows)
    assert result.lines[0].startswith("[beta=0.5]")


def test_sweep_reports_a_failing_entry_and_finishes_the_rest(tmp_path):
    config = parse_config(ZERO_SOLVE.replace("mode = solve", "mode = sweep") + "sweep_param = xi\n"
                          "sweep_values = 1.0, 0, 2.0\n")
    result = run(config, tmp_path)
    assert result.exit_code == 1
    with open(tmp_path / "sweep.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["exit_code"] for row in rows] == ["0", "1", "0"]
    assert rows[1]["objective"] == ""
    assert (tmp_path / "000_xi" / "summary.json").exists()
    assert (tmp_path / "002_xi" / "summary.json").exists()
    assert any("xi: Input should be greater than 0" in line for line in result.lines)


def test_config_error_exit_code(tmp_path):
    config = write_config(tmp_path, "mode = solve\nfoo = 1\n")
    assert main(["--config", str(config)]) == 1


def test_missing_files_exit_code(tmp_path):
    assert main(["--config", str(tmp_path / "missing.cfg")]) == EXIT_IO
    config = write_config(tmp_path, f"mode = solve\na0 = file {tmp_path / 'missing.csv'}\n")
    assert main(["--config", str(config), "--out", str(tmp_path / "out")]) == EXIT_IO
