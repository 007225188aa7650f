import json
import subprocess
import sys

import pytest

from fbsdegame.cli import main
from fbsdegame.fieldio import read_field

from conftest import DATA, config_path


def _run(*args):
    return main([str(a) for a in args])


def test_check_writes_report(tmp_path):
    assert _run("check", config_path("coupled"), "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "check.json").read_text())
    assert rep["accepted"] and rep["monotonicity"]["verified"] and not rep["special_case"]


def test_solve_game_outputs(tmp_path):
    assert _run("solve-game", config_path("game_uplusv"), "--out", tmp_path, "--nt", 10) == 0
    lo = read_field(tmp_path / "game_lower.csv")
    gap = read_field(tmp_path / "isaacs_gap.csv")
    assert lo.values.shape == (11, 321)
    assert dict(lo.meta)["kind"] == "lower" and dict(lo.meta)["n_steps"] == "10"
    assert dict(gap.meta)["value_exists"] == "True"
    assert gap.columns[-1] == "gap"


def test_solve_pde_components(tmp_path):
    assert _run("solve-pde", DATA / "heat.cfg", "--out", tmp_path, "--components") == 0
    t = read_field(tmp_path / "pde_lower.csv")
    assert t.values.shape == (113, 201) and "Z" in t.columns


def test_verify_exit_codes(tmp_path):
    assert _run("verify", config_path("game_uv"), "--out", tmp_path, "--nt", 10, "--suite", "isaacs") == 3
    data = json.loads((tmp_path / "verify.json").read_text())
    assert data["entries"][0]["status"] == "fail"
    assert _run("verify", config_path("game_uplusv"), "--out", tmp_path, "--nt", 10,
                "--suite", "isaacs,ordering") == 0
    assert _run("verify", config_path("game_uplusv"), "--out", tmp_path, "--suite", "bogus") == 1


def test_simulate(tmp_path):
    assert _run("simulate", config_path("crossval_jump"), "--out", tmp_path, "--n-paths", 500) == 0
    rep = json.loads((tmp_path / "simulate.json").read_text())
    assert rep["meta"]["n_paths"] == 500 and len(rep["jumps"]) == 2


def test_config_error_leaves_no_artifacts(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text('[model]\nphi = "x + $"\n')
    out = tmp_path / "out"
    assert _run("solve-game", bad, "--out", out) == 1
    assert not out.exists()
    assert "line 2, column 12" in capsys.readouterr().err


def test_solver_error_exit_code(tmp_path, capsys):
    assert _run("solve-pde", DATA / "heat.cfg", "--out", tmp_path, "--nt", 20) == 2
    assert "CFL" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert _run("check", tmp_path / "nope.cfg") == 1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "fbsdegame.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "solve-game" in out.stdout


@pytest.mark.parametrize("cmd", [["solve-game", "--components"], ["verify", "--suite", "ordering,terminal"]])
def test_artifacts_byte_identical(tmp_path, cmd):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert _run(cmd[0], config_path("crossval_jump"), "--out", d, "--nt", 20, "--seed", 5, *cmd[1:]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        ta, tb = (a / n).read_text(), (b / n).read_text()
        if n.endswith(".json"):
            ta, tb = (json.dumps(_strip(json.loads(t)), sort_keys=True) for t in (ta, tb))
        assert ta == tb


def _strip(obj):
    for e in obj.get("entries", []):
        e.pop("runtime_ms", None)
    return obj
