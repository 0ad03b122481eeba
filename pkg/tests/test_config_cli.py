import ast
import json
import math
from pathlib import Path

import numpy as np
import pytest

import fsl_transducer.cli as cli
from fsl_transducer.config import ConfigError, ExperimentConfig, config_hash, echo_config, validate_config
from fsl_transducer.dynamics import PositivityError
from fsl_transducer.states import Coherent, Fock, SqueezedVacuum


def test_empty_config_is_default(tmp_path):
    f = tmp_path / "empty.yaml"
    f.write_text("")
    cfg = validate_config(f)
    assert cfg == ExperimentConfig() == validate_config(None)
    assert cfg.scenario == "pump" and cfg.n_m == 5 and cfg.input_spec == Fock(5)
    assert cfg.g == pytest.approx(2 * math.pi * 0.282)
    assert cfg.T == 8.2


def test_rate_units():
    cfg = validate_config({"kappa_o_over_2pi_khz": 3.4})
    assert cfg.rates.kappa_o == pytest.approx(2 * math.pi * 0.0034)
    assert validate_config({"decay": False}).rates.is_zero


def test_negative_T_names_field():
    with pytest.raises(ConfigError) as info:
        validate_config({"T_us": -1})
    assert any(e.startswith("T_us") for e in info.value.errors)


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as info:
        validate_config({"T_us": -1, "n_m": 0, "model": "xyz", "bogus": 1,
                         "scan": {"threshold": 2}, "disorder": {"eta_m_grid": [0.5]}})
    fields = {e.split(":")[0] for e in info.value.errors}
    assert fields == {"T_us", "n_m", "model", "bogus", "scan.threshold", "disorder.eta_m_grid"}


def test_input_state_kinds():
    assert validate_config({"input_state": {"kind": "coherent", "alpha_re": 1.0}}).input_spec == Coherent(1.0)
    assert validate_config({"input_state": {"kind": "squeezed", "r": 0.7}}).input_spec == SqueezedVacuum(0.7, 0.0)
    assert validate_config({"n_m": 3}).input_spec == Fock(3)


@pytest.mark.parametrize("raw", [
    {},
    {"scenario": "winding", "model": "ssh", "winding": {"mode": "pump", "initial_even_site": 4}},
    {"input_state": {"kind": "squeezed", "r": 0.5, "theta": 0.3}, "decay": False, "seed": 9},
    {"scan": {"n_list": [1, 2], "gT_step": 0.5}, "disorder": {"samples": 11}},
])
def test_config_round_trip(tmp_path, raw):
    cfg = validate_config(raw)
    f = tmp_path / "echo.yaml"
    echo_config(cfg, f)
    again = validate_config(f)
    assert again == cfg
    assert echo_config(again) == f.read_text()
    assert config_hash(again) == config_hash(cfg)


def test_unreadable_config_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        validate_config(bad)


def test_cli_spectrum(tmp_path, capsys):
    code = cli.main(["spectrum", "--model", "fsl", "--n", "5", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "spectrum.csv").read_text().splitlines()
    E = np.array([float(x) for x in rows[1].split(",")[1:]])
    g = 2 * math.pi * 0.282
    ref = np.sort(np.concatenate([[0.0], g * np.sqrt(np.arange(1, 6)), -g * np.sqrt(np.arange(1, 6))]))
    assert len(E) == 11 and np.max(np.abs(E - ref)) < 1e-9 * g
    assert (tmp_path / "config.yaml").exists() and (tmp_path / "manifest.json").exists()
    echoed = validate_config(tmp_path / "config.yaml")
    assert echoed.scenario == "spectrum" and echoed.n_m == 5


def test_cli_pump_defaults(tmp_path):
    assert cli.main(["pump", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "pump_trajectory.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t_us" and "N_o" in header and "site_pop_11" in header
    summary = json.loads((tmp_path / "pump_summary.json").read_text())
    assert summary["config_hash"] == json.loads((tmp_path / "manifest.json").read_text())["config_hash"]


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    assert cli.main(["spectrum", "--bogus"]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 1 and err["error"] == "UsageError"
    assert cli.main(["nonsense"]) == 1

    bad = tmp_path / "bad.yaml"
    bad.write_text("T_us: -2\nfoo: 1\n")
    assert cli.main(["pump", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert len(err["errors"]) == 2
    assert cli.main(["pump", "--config", str(tmp_path / "missing.yaml")]) == 2

    out = tmp_path / "s"
    assert cli.main(["spectrum", "--out", str(out)]) == 0
    assert cli.main(["spectrum", "--out", str(out)]) == 1
    assert cli.main(["spectrum", "--out", str(out), "--overwrite"]) == 0

    def boom(*a, **k):
        raise PositivityError("eigenvalue -1e-3")

    monkeypatch.setattr("fsl_transducer.experiments.run_scenario", boom)
    assert cli.main(["pump", "--out", str(tmp_path / "p")]) == 3


def test_cli_selftest(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_cli_seed_override_changes_disorder(tmp_path):
    cfgfile = tmp_path / "c.yaml"
    cfgfile.write_text("n_m: 2\ngrid_points: 11\ndisorder: {eta_m_grid: [0.1], eta_o_grid: [0.1], samples: 2}\n")
    a = cli.main(["disorder", "--config", str(cfgfile), "--out", str(tmp_path / "a"), "--seed", "1"])
    b = cli.main(["disorder", "--config", str(cfgfile), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert a == b == 0
    assert (tmp_path / "a" / "disorder_surface.csv").read_text() != (tmp_path / "b" / "disorder_surface.csv").read_text()


def test_cli_is_thin_dispatcher():
    tree = ast.parse(Path(cli.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add((node.module or "").split(".")[-1])
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    assert not imported & {"numpy", "scipy", "hamiltonians", "topology", "states", "hilbert"}
