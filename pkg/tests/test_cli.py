import csv
import json
import math
import subprocess
import sys

import pytest

from postbound import cli


def run_cli(tmp_path, *args):
    out = tmp_path / "out"
    code = cli.main(["analyze", *args, "--out", str(out), "--quiet"])
    return code, out


def test_number_parsing():
    assert cli._number("ln1.1") == pytest.approx(math.log(1.1))
    assert cli._number("log(3)") == pytest.approx(math.log(3))
    assert cli._number("inf") == math.inf
    assert cli._number(" 2.5 ") == 2.5


def test_bounds_and_ost_parsing():
    assert cli._bounds(["pos=0:5", "dis=-1:ln1"]) == {"pos": (0.0, 5.0), "dis": (-1.0, 0.0)}
    with pytest.raises(Exception):
        cli._bounds(["pos=0"])
    assert cli._ost("c1=1,c3=ln2") == {"c1": 1.0, "c3": pytest.approx(math.log(2))}
    with pytest.raises(Exception):
        cli._ost("c4=1")


def test_benchmarks_listing(capsys):
    assert cli.main(["benchmarks"]) == cli.EXIT_OK
    names = capsys.readouterr().out.split()
    for n in ("trivial", "geometric_exit", "nonintegrable", "pedestrian", "pedestrian_ld", "birth", "cav_ex_7"):
        assert n in names


def test_trivial_run_writes_outputs(tmp_path):
    code, out = run_cli(tmp_path, "trivial", "--mode", "z-bounds")
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["verified"] is True
    assert rep["z"]["l"] == pytest.approx(0.5, abs=1e-9)
    assert rep["z"]["u"] == pytest.approx(0.5, abs=1e-9)
    rows = list(csv.DictReader(open(out / "bounds.csv")))
    assert len(rows) == 1 and rows[0]["run"] == "Z"


def test_geometric_with_oracle_csv(tmp_path):
    code, out = run_cli(tmp_path, "geometric_exit", "--d", "2", "--engine", "handelman", "--oracle-n", "2000")
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["z"]["l"] <= 2.0 <= rep["z"]["u"]
    rows = list(csv.DictReader(open(out / "oracle.csv")))
    assert json.loads(rows[0]["witness"]) == {} and float(rows[0]["estimate"]) == pytest.approx(2.0)
    assert rep["rng"].startswith("numpy Philox")


def test_nonintegrable_exit_code(tmp_path, capsys):
    code, out = run_cli(tmp_path, "nonintegrable")
    assert code == cli.EXIT_OST
    rep = json.loads((out / "report.json").read_text())
    assert rep["ost"]["passed"] is False
    assert "OST" in capsys.readouterr().err


def test_missing_program(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "no_such_program")
    assert code == cli.EXIT_ERROR
    assert "no bundled benchmark" in capsys.readouterr().err


def test_parse_error_reported(tmp_path, capsys):
    bad = tmp_path / "bad.bppl"
    bad.write_text("x := ;\nreturn x\n")
    code, _ = run_cli(tmp_path, str(bad))
    assert code == cli.EXIT_ERROR
    assert capsys.readouterr().err.startswith("error:")


def test_program_from_file(tmp_path):
    prog = tmp_path / "half.bppl"
    prog.write_text("x := 0;\nscore(0.25);\nreturn x\n")
    code, out = run_cli(tmp_path, str(prog), "--mode", "z-bounds")
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["program"] == "half"
    assert rep["z"]["u"] == pytest.approx(0.25, abs=1e-9)


def test_config_file_and_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"degree": 3, "partitions": 2, "seed": 7}))
    args = cli.build_parser().parse_args(["analyze", "trivial", "--config", str(conf), "--m", "4"])
    cfg = cli.make_config(args)
    assert (cfg.degree, cfg.partitions, cfg.seed) == (3, 4, 7)


def test_unknown_config_key(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"degre": 3}))
    code, _ = run_cli(tmp_path, "trivial", "--config", str(conf))
    assert code == cli.EXIT_ERROR
    assert "unknown config keys" in capsys.readouterr().err


def test_time_limit_env(monkeypatch):
    monkeypatch.setenv(cli.TIME_LIMIT_ENV, "12.5")
    args = cli.build_parser().parse_args(["analyze", "trivial"])
    assert cli.make_config(args).time_limit == 12.5


def test_query_flag(tmp_path):
    args = cli.build_parser().parse_args(["analyze", "cav_ex_7", "--query", "Q1@count=:30", "--query", "x=0:1"])
    qs = cli.make_config(args).queries
    assert qs[0].label == "Q1" and qs[0].var == "count" and qs[0].lo == -math.inf and qs[0].hi == 30
    assert qs[1].var == "x" and (qs[1].lo, qs[1].hi) == (0.0, 1.0)


def test_invalid_degree(tmp_path):
    code, _ = run_cli(tmp_path, "trivial", "--d", "0")
    assert code == cli.EXIT_ERROR


def test_simulate_mode(tmp_path):
    code, out = run_cli(tmp_path, "geometric_exit", "--mode", "simulate", "--oracle-n", "5000", "--m", "1")
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["oracle"]["z"]["mean"] == pytest.approx(2.0, abs=0.1)
    rows = list(csv.DictReader(open(out / "oracle.csv")))
    assert len(rows) == 1 and float(rows[0]["estimate"]) > 0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "postbound.cli", "analyze", "trivial", "--mode", "z-bounds",
                        "--out", str(tmp_path / "o")], capture_output=True, text=True, timeout=120)
    assert r.returncode == 0
    assert "verified True" in r.stdout
