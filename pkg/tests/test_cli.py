import json
import subprocess
import sys

import pytest

from adaloc.cli import EXIT_DIVERGED, EXIT_ERROR, EXIT_OK, main
from adaloc.harness import io

SHORT = """
name = "cli-short"
seed = 5
[model]
kind = "lorenz96"
[observations]
pattern = "sparse30"
[filter]
cycles = 40
spinup = 10
[localization]
mode = "constant"
radius = 4.0
[oracle]
grid = [2.0, 4.0]
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "short.toml"
    p.write_text(SHORT)
    return p


def test_run_writes_outputs(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
    for name in ("cycles.csv", "summary.csv", "manifest.json"):
        assert (out / name).exists()
    rows = io.read_csv(out / "cycles.csv")
    assert len(rows) == 40 and "radius_1" in rows[0]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert "aggregate RMSE" in capsys.readouterr().out


def test_run_bundled_config_by_name(tmp_path, monkeypatch):
    # shrink the bundled run by overriding the cycle count through a copy
    from adaloc.harness.config import bundled_config_path

    text = bundled_config_path("lorenz96_constant").read_text().replace("cycles = 1100", "cycles = 30")
    text = text.replace("spinup = 100", "spinup = 5")
    p = tmp_path / "lorenz96_constant.toml"
    p.write_text(text)
    out = tmp_path / "o"
    assert main(["run", "--config", str(p), "--out", str(out)]) == EXIT_OK
    assert (out / "summary.csv").exists()


def test_seed_override_and_reproducibility(cfg_path, tmp_path):
    outs = []
    for name, seed in (("a", "7"), ("b", "7"), ("c", "8")):
        out = tmp_path / name
        assert main(["run", "--config", str(cfg_path), "--out", str(out), "--seed", seed]) == EXIT_OK
        outs.append((out / "cycles.csv").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 7


def test_config_not_mutated(cfg_path, tmp_path):
    before = cfg_path.read_bytes()
    main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o"), "--seed", "1"])
    assert cfg_path.read_bytes() == before


def test_oracle_command_writes_candidates(cfg_path, tmp_path):
    out = tmp_path / "or"
    assert main(["oracle", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
    cands = io.read_csv(out / "candidates.csv")
    assert len(cands) == 40 and set(cands[0]) == {"cycle", "r_2.0", "r_4.0"}


def test_sweep_command(cfg_path, tmp_path, capsys):
    text = SHORT + "[sweep]\ninflation = [1.02, 1.04]\nradius = [3.0, 4.0]\n"
    cfg_path.write_text(text)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg_path), "--out", str(out), "--workers", "2"]) == EXIT_OK
    assert len(io.read_csv(out / "summary.csv")) == 4
    assert "best for alpha=1.02" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[filter]\nensemble_size = 1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert f"{p}:2:" in err


def test_missing_config(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["run", "--config", "no_such_bundle", "--out", str(tmp_path)]) == EXIT_ERROR


def test_divergence_exit_code(cfg_path, tmp_path, capsys):
    cfg_path.write_text(SHORT.replace("spinup = 10", "spinup = 2\ndivergence_factor = 0.01"))
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "d")]) == EXIT_DIVERGED
    assert "DIVERGED" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["result"]["diverged"] is True


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        main(["run", "--config", "x", "--seed", "-1"])


def test_check_command(capsys):
    assert main(["check"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("gradient", "psd", "arakawa"):
        assert f"PASS {name}" in out


def test_module_entry_point(cfg_path, tmp_path):
    res = subprocess.run([sys.executable, "-m", "adaloc.cli", "run", "--config", str(cfg_path),
                          "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
