import json
import subprocess
import sys
from pathlib import Path

import pytest

from meanfield_clt import cli
from meanfield_clt.config import ConfigError, config_hash, load_config, resolve

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_xi_run_outputs(tmp_path):
    assert cli.main(["run", "xi", "--config", str(CONFIGS / "xi.json"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "xi.json").read_text())
    cfg = load_config(CONFIGS / "xi.json", "xi")
    assert summary["config_hash"] == config_hash(cfg) and summary["passed"]
    norms = summary["extra"]["norms"]
    assert [n["N"] for n in norms] == [2.0, 10.0, 100.0, 1000.0, 10000.0]
    assert all({"apriori", "total", "diff5"} <= set(n) for n in norms)
    data = (tmp_path / "xi.csv").read_bytes()
    assert b"\r" not in data and data.endswith(b"\n")
    header, first = data.split(b"\n")[:2]
    assert header == b"config_hash,N,l,w_N,w_inf"
    assert first.split(b",")[3] == b"1.0000000000000000e+00"


def test_clt_summary_has_slopes(tmp_path):
    doc = {"study": {"N": [16, 32, 64], "times": [0.0], "tau_points": 5}}
    code = cli.main(["run", "clt", "--config", str(write(tmp_path, doc)), "--out", str(tmp_path), "--workers", "1"])
    summary = json.loads((tmp_path / "clt.json").read_text())
    assert code in (0, 2) and summary["fits"]
    assert all("slope" in f for f in summary["fits"])


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli.main(["run", "xi", "--config", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_key_names_path(tmp_path, capsys):
    p = write(tmp_path, {"space": {"kernel": {"width": 2}}})
    assert cli.main(["run", "hartree", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert "space.kernel.width" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="study.thresholds"):
        resolve({"study": {"thresholds": {"bogus": 1}}}, "xi")
    with pytest.raises(ConfigError, match="study.max"):
        resolve({"study": {"max": 1}}, "xi")


def test_threshold_failure_exit_code(tmp_path, capsys):
    p = write(tmp_path, {"study": {"thresholds": {"agreement": 0.0}}})
    assert cli.main(["run", "xi", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "recursion_vs_closed_form" in capsys.readouterr().err
    assert json.loads((tmp_path / "xi.json").read_text())["passed"] is False


def test_resolved_config_and_no_temp_files(tmp_path):
    assert cli.main(["run", "hartree", "--out", str(tmp_path), "--emit-resolved-config"]) == 0
    resolved = json.loads((tmp_path / "hartree.resolved-config.json").read_text())
    assert resolved == resolve(None, "hartree")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["hartree.csv", "hartree.json", "hartree.resolved-config.json"]


def test_rerun_is_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["run", "bogoliubov", "--config", str(CONFIGS / "three-mode-symplectic.json"), "--out", str(d)]) == 0
    for name in ("bogoliubov.csv", "bogoliubov.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_worker_env_fallback(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli._default_workers() == 3
    monkeypatch.delenv(cli.WORKERS_ENV)
    assert cli._default_workers() >= 1


def test_bad_worker_values(tmp_path, monkeypatch):
    assert cli.main(["run", "xi", "--workers", "0", "--out", str(tmp_path)]) == 1
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    assert cli.main(["run", "xi", "--out", str(tmp_path)]) == 1


def test_schema_value_errors():
    with pytest.raises(ConfigError, match="space.kind"):
        resolve({"space": {"kind": "sphere"}}, "hartree")
    with pytest.raises(ConfigError, match="increasing"):
        resolve({"study": {"N": [16, 8, 32]}}, "clt")
    with pytest.raises(ConfigError, match="at least 3"):
        resolve({"study": {"N": [16, 32]}}, "clt")


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "meanfield_clt", "run", "--help"], capture_output=True, text=True, check=True)
    assert "--emit-resolved-config" in out.stdout and "study defaults" in out.stdout


def test_format_csv():
    text = cli.format_csv(["a", "b", "c", "d"], [[1, 0.1, "x", True]])
    assert text == "a,b,c,d\n1,1.0000000000000001e-01,x,true\n"
    assert float("1.0000000000000001e-01") == 0.1
