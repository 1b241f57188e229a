import json
import subprocess
import sys

import pytest

from heightlab import config as C
from heightlab.cli import SUBCOMMANDS, build_parser, main, replay_matches

SMALL = ["--set", "run.N=3", "--set", "simulation.horizon=0.2", "--set", "simulation.dt=1e-3"]


def test_defaults_resolve():
    cfg = C.resolve()
    assert cfg["mechanism.beta"] > 0 and cfg["run.workers"] >= 1


def test_unknown_key_rejected():
    with pytest.raises(C.ConfigError) as e:
        C.resolve({"mechanism.gamma": "1"})
    assert "mechanism.gamma" in str(e.value)


def test_bad_values_rejected():
    with pytest.raises(C.ConfigError):
        C.resolve({"mechanism.beta": "-1"})
    with pytest.raises(C.ConfigError):
        C.resolve({"simulation.dt": "fast"})
    with pytest.raises(C.ConfigError):
        C.parse_text("no equals sign")


def test_parse_text_and_overrides():
    raw = C.parse_text("mechanism.alpha = 0.3  # comment\n\nmechanism.pi.kind = atoms\nmechanism.pi.atoms = 1:0.5")
    cfg = C.resolve(raw, C.parse_overrides(["mechanism.alpha=0.4"]))
    assert cfg["mechanism.alpha"] == 0.4
    assert cfg["mechanism.pi.atoms"] == ((1.0, 0.5),)
    assert C.mechanism(cfg).pi.tail(0.0) == 0.5


def test_workers_env(monkeypatch):
    monkeypatch.setenv("HEIGHTLAB_WORKERS", "3")
    assert C.resolve()["run.workers"] == 3
    assert C.resolve({"run.workers": "2"})["run.workers"] == 2


def test_help_lists_every_key_and_subcommand():
    text = build_parser().format_help()
    for key in C.KEYS:
        assert key in text
    for cmd in SUBCOMMANDS:
        assert cmd in text


def test_config_error_exit_code(tmp_path, capsys):
    code = main(["simulate-levy", "--set", "mechanism.beta=-1", "--output", str(tmp_path)])
    assert code == 2
    assert "mechanism.beta" in capsys.readouterr().err


def test_extinction_check(tmp_path, capsys):
    code = main(["extinction-check", "--set", "interaction.f.kind=polynomial", "--set",
                 "interaction.f.coeffs=0,-1", "--output", str(tmp_path)])
    assert code == 0
    assert "ExtinctAS" in capsys.readouterr().out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["exit_code"] == 0


def test_simulate_height_outputs_and_replay(tmp_path):
    out = tmp_path / "a"
    assert main(["simulate-height", *SMALL, "--output", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "complete" and man["command"] == "simulate-height"
    assert "path_0000.csv" in man["digests"] and "ltfield_0002.csv" in man["digests"]
    assert (out / "summary.csv").exists()
    assert replay_matches(out / "manifest.json", tmp_path / "b")


def test_workers_do_not_change_outputs(tmp_path):
    args = ["verify-bounds", "--set", "run.N=600", "--set", "simulation.s_list=0.5",
            "--set", "simulation.x_grid=0.5", "--set", "simulation.z_grid=0.5"]
    assert main([*args, "--workers", "1", "--output", str(tmp_path / "w1")]) in (0, 1)
    assert main([*args, "--workers", "2", "--output", str(tmp_path / "w2")]) in (0, 1)
    d1 = json.loads((tmp_path / "w1" / "manifest.json").read_text())["digests"]
    d2 = json.loads((tmp_path / "w2" / "manifest.json").read_text())["digests"]
    assert d1 == d2


def test_simulate_csbp_and_interacting(tmp_path):
    assert main(["simulate-csbp", *SMALL, "--output", str(tmp_path / "c")]) == 0
    head = (tmp_path / "c" / "population.csv").read_text().splitlines()[0]
    assert head == "replicate,time,x_label,Z"
    assert main(["simulate-interacting", "--set", "run.N=3", "--set", "simulation.dt=1e-3",
                 "--set", "simulation.x_target=0.25", "--output", str(tmp_path / "i")]) == 0


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "heightlab.cli", "extinction-check", "--output", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode in (0, 1)
    assert r.stdout.strip()


def test_interacting_needs_localisation(tmp_path, capsys):
    base = ["simulate-interacting", "--set", "interaction.f.kind=logistic", "--set", "run.N=2",
            "--set", "simulation.dt=1e-3", "--output", str(tmp_path)]
    assert main(base) == 2
    assert "interaction.b" in capsys.readouterr().err
    assert main([*base, "--set", "interaction.b=10"]) == 0
