"""Experiment registry, config parsing, artifacts, and the CLI."""

import json

import numpy as np
import pytest

from heiscouple import cli
from heiscouple import experiments as exp


def test_registry_names():
    assert set(exp.EXPERIMENTS) == {
        "algebra-suite", "matrix-lemmas", "scheme-consistency",
        "blowup-synchronous", "blowup-reflection", "blowup-perverse",
        "kendall-success", "reflection-exponents", "reflection-hitting",
        "static-ratio", "static-baseline", "mg-lemma", "excursion-moments",
    }


def test_default_params():
    p = exp.default_params("kendall-success")
    assert p["kappa"] == 1.0 and p["epsilon"] == 0.5
    assert p["checkpoints"] == (10.0, 40.0, 160.0)
    with pytest.raises(exp.ConfigError, match="unknown experiment"):
        exp.default_params("nope")


def test_parse_config_happy_path(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[algebra-suite]\nn_cases = 500\nseed = 3\n\n"
        "[kendall-success]\ncheckpoints = 5, 10\nn_paths = 100\n"
    )
    runs = exp.parse_config(cfg)
    assert [name for name, _ in runs] == ["algebra-suite", "kendall-success"]
    assert runs[0][1]["n_cases"] == 500 and runs[0][1]["seed"] == 3
    assert runs[1][1]["checkpoints"] == (5.0, 10.0)
    only = exp.parse_config(cfg, experiment="kendall-success")
    assert len(only) == 1 and only[0][0] == "kendall-success"


@pytest.mark.parametrize("body,msg", [
    ("[what-is-this]\nseed = 1\n", "unknown experiment"),
    ("[algebra-suite]\nwidgets = 3\n", "unknown key"),
    ("[algebra-suite]\nn_cases = many\n", "bad value"),
    ("[kendall-success]\nalpha = 0\n", "must be positive"),
    ("[kendall-success]\ncheckpoints = -1, 4\n", "positive entries"),
])
def test_parse_config_rejects(tmp_path, body, msg):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(body)
    with pytest.raises(exp.ConfigError, match=msg):
        exp.parse_config(cfg)


def test_parse_config_missing_file_and_section(tmp_path):
    with pytest.raises(exp.ConfigError, match="cannot read"):
        exp.parse_config(tmp_path / "absent.ini")
    cfg = tmp_path / "one.ini"
    cfg.write_text("[algebra-suite]\n")
    with pytest.raises(exp.ConfigError, match="no \\[mg-lemma\\] section"):
        exp.parse_config(cfg, experiment="mg-lemma")


def test_run_experiment_artifacts(tmp_path):
    ok, checks = exp.run_experiment(
        "matrix-lemmas", {"n_cases": 300}, out=tmp_path, stamp="teststamp"
    )
    assert ok and all(c.ok for c in checks)
    d = tmp_path / "matrix-lemmas"
    lines = (d / "report.jsonl").read_text().splitlines()
    rows = [json.loads(ln) for ln in lines]
    assert {r["experiment"] for r in rows} == {"matrix-lemmas"}
    assert all(set(r) == {"experiment", "quantity", "value", "stderr", "pass"}
               for r in rows)
    summary = (d / "summary.csv").read_text().splitlines()
    assert summary[0] == "# matrix-lemmas teststamp"
    assert summary[1] == "checkpoint_time,stat_name,estimate,stderr,n_paths"
    # no path ensemble here: header-only ensemble file
    ens = (d / "ensemble.csv").read_text().splitlines()
    assert len(ens) == 2 and ens[1] == "checkpoint_time,path_id,R2,Z,V,QV"


def test_run_experiment_writes_ensemble(tmp_path):
    ok, _ = exp.run_experiment(
        "scheme-consistency",
        {"n_paths": 256, "horizon": 0.1, "dt": 0.005},
        out=tmp_path,
    )
    assert ok
    body = (tmp_path / "scheme-consistency" / "ensemble.csv").read_text().splitlines()
    assert len(body) == 2 + 256  # one checkpoint, kendall full ensemble
    first = body[2].split(",")
    assert len(first) == 6 and float(first[0]) == 0.1


def test_run_experiment_reproducible_bodies(tmp_path):
    params = {"n_paths": 256, "horizon": 0.1, "dt": 0.005}
    exp.run_experiment("scheme-consistency", dict(params), out=tmp_path / "a",
                       stamp="then")
    exp.run_experiment("scheme-consistency", dict(params), out=tmp_path / "b",
                       stamp="now")
    for fname in ("ensemble.csv", "summary.csv", "report.jsonl"):
        fa = (tmp_path / "a" / "scheme-consistency" / fname).read_text().splitlines()
        fb = (tmp_path / "b" / "scheme-consistency" / fname).read_text().splitlines()
        skip = 1 if fname.endswith(".csv") else 0  # timestamp header line
        assert fa[skip:] == fb[skip:]


def test_cli_list_and_exit_codes(tmp_path, capsys):
    assert cli.main(["--list"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "kendall-success" in out and len(out) == len(exp.EXPERIMENTS)
    # config errors exit 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[algebra-suite]\nwhat = 1\n")
    assert cli.main(["--config", str(bad)]) == 2
    assert cli.main(["--config", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["--experiment", "unknown-name"]) == 2
    assert cli.main([]) == 2
    assert cli.main(["--experiment", "algebra-suite", "--threads", "0"]) == 2


def test_cli_runs_config_and_reports(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[algebra-suite]\nn_cases = 400\n")
    code = cli.main(["--config", str(cfg), "--out", str(tmp_path / "art")])
    out = capsys.readouterr().out
    assert code == 0
    assert "[pass]" in out and "[FAIL]" not in out
    assert (tmp_path / "art" / "algebra-suite" / "report.jsonl").exists()


def test_cli_seed_override(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[scheme-consistency]\nn_paths = 256\nhorizon = 0.1\ndt = 0.005\nseed = 1\n")
    cli.main(["--config", str(cfg), "--out", str(tmp_path / "s1")])
    cli.main(["--config", str(cfg), "--out", str(tmp_path / "s2"), "--seed", "99"])
    e1 = (tmp_path / "s1" / "scheme-consistency" / "ensemble.csv").read_text().splitlines()
    e2 = (tmp_path / "s2" / "scheme-consistency" / "ensemble.csv").read_text().splitlines()
    assert e1[1] == e2[1]
    assert e1[2:] != e2[2:]


def test_cli_failed_check_exits_one(tmp_path, capsys):
    # tiny kendall run cannot reach the >0.8 success fraction
    cfg = tmp_path / "run.ini"
    cfg.write_text("[kendall-success]\nn_paths = 200\nalpha = 0.05\ncheckpoints = 1, 2\n")
    code = cli.main(["--config", str(cfg), "--out", str(tmp_path / "k")])
    out = capsys.readouterr().out
    assert code == 1
    assert "[FAIL]" in out
    rows = [json.loads(ln) for ln in
            (tmp_path / "k" / "kendall-success" / "report.jsonl").read_text().splitlines()]
    assert any(not r["pass"] for r in rows)


def test_threads_flag_does_not_change_numbers(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[scheme-consistency]\nn_paths = 1100\nhorizon = 0.1\ndt = 0.005\n")
    cli.main(["--config", str(cfg), "--out", str(tmp_path / "t1"), "--threads", "1"])
    cli.main(["--config", str(cfg), "--out", str(tmp_path / "t3"), "--threads", "3"])
    for fname in ("ensemble.csv", "summary.csv"):
        a = (tmp_path / "t1" / "scheme-consistency" / fname).read_text().splitlines()[1:]
        b = (tmp_path / "t3" / "scheme-consistency" / fname).read_text().splitlines()[1:]
        assert a == b
