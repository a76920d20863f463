import json
import subprocess
import sys

import pytest

from hsselfsim.cli import COMMANDS, DEFAULT_OPTIONS, build_config, main, make_parser
from hsselfsim.core import ConfigError


def _write(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_eigen_run(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["eigen", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["result"]["lambda1"] == pytest.approx(2.0, rel=1e-3)
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["params"]["N"] == 4
    assert {"numpy", "scipy", "backend", "hsselfsim"} <= set(man["versions"])
    assert man["wall_time_s"] >= 0
    assert (out / "fields" / "eigenfield.csv").exists()
    assert "[PASS] lambda1_rel_err" in capsys.readouterr().out


def test_malformed_config_no_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = _write(tmp_path, {"command": "eigen", "params": {"s": 2}})
    assert main(["--config", str(cfg), "--out", str(out)]) != 0
    assert not out.exists()
    assert "params" in capsys.readouterr().err


@pytest.mark.parametrize("raw,field", [
    ({"command": "nope"}, "command"),
    ({"command": "eigen", "grid": {"R_max": 0}}, "grid"),
    ({"command": "eigen", "grid": {"M": 4}}, "grid"),
    ({"command": "eigen", "options": {"bogus": 1}}, "options"),
    ({"command": "eigen", "params": {"N": "five"}}, "params.N"),
    ({"command": "eigen", "seed": 1.5}, "seed"),
    ({"command": "eigen", "extra": 1}, "config"),
])
def test_field_level_messages(raw, field):
    with pytest.raises(ConfigError, match=field):
        build_config(raw)


def test_sweep_reproducible_and_ordered(tmp_path):
    cfg = _write(tmp_path, {"command": "sweep-eps",
                            "options": {"eps": [1e-3, 1e-2, 3e-2, 1e-1, 3e-4]}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", str(cfg), "--out", str(a)]) == 0
    assert main(["--config", str(cfg), "--out", str(b), "--jobs", "3"]) == 0
    for name in ("sweep_alpha_1.4.csv", "sweep_alpha_2.1.csv", "slopes.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    body = (a / "sweep_alpha_1.4.csv").read_text().splitlines()
    assert body[0] == "eps,Q_weighted,Q_unweighted,A,B,status"
    assert [float(x.split(",")[0]) for x in body[1:]] == [1e-3, 1e-2, 3e-2, 1e-1, 3e-4]


def test_sweep_failed_rows_and_strict(tmp_path):
    cfg = _write(tmp_path, {"command": "sweep-eps", "options": {"eps": [1e-3, 1e-2, 1e-1, -1.0]}})
    out = tmp_path / "r"
    main(["--config", str(cfg), "--out", str(out)])
    rows = (out / "sweep_alpha_1.4.csv").read_text().splitlines()
    assert len(rows) == 5 and "error" in rows[-1]
    assert main(["--config", str(cfg), "--out", str(tmp_path / "s"), "--strict"]) == 1


def test_env_out_override(tmp_path, monkeypatch):
    monkeypatch.setenv("HSSELFSIM_OUT", str(tmp_path / "envdir"))
    assert main(["eigen"]) == 0
    assert (tmp_path / "envdir" / "report.json").exists()
    assert main(["eigen", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "report.json").exists()


def test_threshold_miss_exit(tmp_path):
    cfg = _write(tmp_path, {"command": "eigen", "options": {"tol_lambda": 1e-9}})
    assert main(["--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert not rep["passed"]


def test_help_lists_defaults():
    text = make_parser().format_help()
    for c in COMMANDS:
        assert c in text
    assert "tol_lambda" in text and "R_max" in text
    assert set(DEFAULT_OPTIONS) == set(COMMANDS)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hsselfsim", "constants", "--out",
                          str(tmp_path / "c")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "c" / "hardy.csv").read_text().startswith("eps,")
