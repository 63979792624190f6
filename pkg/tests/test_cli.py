import json
import subprocess
import sys

import pytest

from poupinn import jsonio, train
from poupinn.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main

SMALL = ["--set", "collocation.n_interior=64"]


def test_list_table(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    row = next(l for l in out.splitlines() if l.startswith("pou-ex3"))
    assert "10000" in row.split()


def test_list_json(capsys):
    assert main(["list", "--json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 10
    assert {r["name"]: r["epochs"] for r in rows}["pou-ex3"] == 10000


def test_run_short(tmp_path, capsys):
    assert main(["run", "pinn-ex2", "--set", "epochs=10", *SMALL, "--out", str(tmp_path)]) == EXIT_OK
    assert len(train.read_history(tmp_path / "pinn-ex2" / "history.csv")) == 10


def test_run_unknown_name(capsys):
    assert main(["run", "nosuch"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "pinn-ex1" in err and "poupinn-ex2" in err


@pytest.mark.parametrize("bad", ["epochz=3", "epochs", "epochs=abc", "lr=-1"])
def test_run_bad_override(tmp_path, bad):
    assert main(["run", "pinn-ex2", "--set", bad, "--out", str(tmp_path)]) == EXIT_USAGE
    assert not (tmp_path / "pinn-ex2").exists()


def test_missing_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["chain", "pou-ex5"]) == EXIT_USAGE


def test_rerun_from_config_is_byte_identical(tmp_path):
    assert main(["run", "pou-ex5", "--set", "epochs=2", "--out", str(tmp_path / "a")]) == EXIT_OK
    cfg = tmp_path / "a" / "pou-ex5" / "config.json"
    assert main(["run", "pou-ex5", "--config", str(cfg), "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("metrics.json", "checkpoint.json", "history.csv", "config.json"):
        a = (tmp_path / "a" / "pou-ex5" / name).read_bytes()
        assert a == (tmp_path / "b" / "pou-ex5" / name).read_bytes()


def test_config_from_other_experiment_rejected(tmp_path):
    assert main(["run", "pou-ex5", "--set", "epochs=1", "--out", str(tmp_path)]) == EXIT_OK
    cfg = tmp_path / "pou-ex5" / "config.json"
    assert main(["run", "pou-ex6", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exit_code(tmp_path):
    code = main(["run", "pinn-ex2", "--set", "epochs=50", "--set", "lr=1e300",
                 "--set", "collocation.n_interior=16", "--out", str(tmp_path)])
    assert code == EXIT_FAILURE
    assert (tmp_path / "pinn-ex2" / "FAILED").exists()


def test_chain(tmp_path, capsys):
    assert main(["chain", "pou-ex5", "--links", "2", "--set", "epochs=2", "--out", str(tmp_path)]) == EXIT_OK
    summary = jsonio.read(tmp_path / "pou-ex5" / "chain.json")
    assert len(summary["links"]) == 2
    assert main(["chain", "pou-ex5", "--links", "0", "--out", str(tmp_path)]) == EXIT_USAGE


def test_eval_and_export(tmp_path, capsys):
    assert main(["run", "pinn-ex1", "--set", "epochs=2", *SMALL, "--out", str(tmp_path)]) == EXIT_OK
    ckpt = tmp_path / "pinn-ex1" / "checkpoint.json"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--experiment", "pinn-ex1"]) == EXIT_OK
    assert "relative_l2" in json.loads(capsys.readouterr().out)
    out = tmp_path / "u.csv"
    assert main(["export", "--checkpoint", str(ckpt), "--kind", "u", "--res", "5,4", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 21
    assert main(["export", "--checkpoint", str(ckpt), "--kind", "flux"]) == EXIT_USAGE
    assert main(["export", "--checkpoint", str(ckpt), "--kind", "u", "--res", "5x4"]) == EXIT_USAGE
    assert main(["export", "--checkpoint", str(ckpt), "--kind", "partition"]) == EXIT_FAILURE
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.json"), "--experiment", "pinn-ex1"]) == EXIT_FAILURE


def test_check(capsys):
    assert main(["check"]) == EXIT_OK
    out = capsys.readouterr().out
    unity = next(l for l in out.splitlines() if "unity" in l)
    assert unity.startswith("PASS") and float(unity.split("max ")[1].split()[0]) <= 1e-12
    assert any(l.startswith("NOTICE") and "pinn-ex1" in l for l in out.splitlines())


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "poupinn", "list", "--json"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert len(json.loads(proc.stdout)) == 10
