import csv
import math

import pytest

from pertflow import cli
from pertflow import config as cfgmod


def test_overrides_parse_toml_literals():
    cfg = cfgmod.apply_overrides(cfgmod.DEFAULT_CONFIG, ["sweep.eps=0.25", "operator.K=8", "coefficients.preset=zero",
                                                        "sweep.h=[0.1, 0.05]"])
    assert cfg["sweep"]["eps"] == 0.25
    assert cfg["operator"]["K"] == 8
    assert cfg["coefficients"]["preset"] == "zero"
    assert cfg["sweep"]["h"] == [0.1, 0.05]
    assert cfgmod.DEFAULT_CONFIG["sweep"]["eps"] == 0.1
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.apply_overrides(cfgmod.DEFAULT_CONFIG, ["eps=1"])
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.apply_overrides(cfgmod.DEFAULT_CONFIG, ["nosuch.eps=1"])


def test_load_errors(tmp_path):
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[operator\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load(bad)
    extra = tmp_path / "extra.toml"
    extra.write_text("[bogus]\nx = 1\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load(extra)


def test_dense_operator_from_csv(tmp_path):
    (tmp_path / "A.csv").write_text("0,-1\n1,0\n")
    cfg = cfgmod.apply_overrides(cfgmod.DEFAULT_CONFIG, [
        "operator.backend='dense'", f"operator.A_csv='{tmp_path / 'A.csv'}'", "operator.G=[[1.0, 0.0], [0.0, 2.0]]",
        "operator.m=1"])
    P = cfgmod.build_operator(cfg)
    assert P.backend == "dense" and P.dim == 2
    u0 = cfgmod.build_initial(cfgmod.apply_overrides(cfg, ["initial.modes=[[1, 'cos', 2.0]]"]), P.basis)
    assert list(u0.coeffs) == [0.0, 2.0]


def test_describe_round_trip(tmp_path, capsys):
    assert cli.main(["describe", "--set", "sweep.eps=0.3"]) == 0
    out = capsys.readouterr().out
    path = tmp_path / "c.toml"
    path.write_text(out)
    assert cli.main(["describe", "--config", str(path)]) == 0
    again = capsys.readouterr().out
    assert again == out
    assert cfgmod.config_hash(cfgmod.load(path)) == out.strip().splitlines()[-1].split()[-1]


def test_sensitivity_zero_preset_csv(tmp_path, capsys):
    code = cli.main(["sensitivity", "--order", "1", "--preset", "zero", "--eps", "0.1", "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "sensitivity_levels.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["level"] == "1"]
    last = rows[-1]
    assert float(last["time"]) == 0.5
    assert float(last["mode2"]) == pytest.approx(1.63746, abs=1e-5)
    with open(tmp_path / "sensitivity_level1.csv") as fh:
        final = list(csv.DictReader(fh))[-1]
    assert math.hypot(float(final["c3"]), float(final["c4"])) == pytest.approx(2 * math.exp(-0.2), rel=1e-12)


def test_simulate_writes_outputs(tmp_path, capsys):
    code = cli.main(["simulate", "--paths", "8", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "simulate.csv").exists()
    assert (tmp_path / "simulate_path0.csv").exists()
    assert (tmp_path / "report.txt").read_text().startswith("[PASS] simulate")


def test_verify_exit_codes(tmp_path, capsys):
    assert cli.main(["verify", "--name", "h1", "--out", str(tmp_path)]) == 0
    assert cli.main(["verify", "--name", "h1", "--config", str(tmp_path / "missing.toml")]) == 2
    assert cli.main(["verify", "--name", "zero_exactness", "--set", "tolerances.abs=0.0", "--out",
                     str(tmp_path)]) == 1
    assert cli.main(["verify", "--name", "nope"]) == 2
    assert cli.main(["bogus"]) == 2
    assert cli.main([]) == 2


def test_bad_config_value_is_usage_error(capsys):
    assert cli.main(["describe", "--set", "broken"]) == 2
    assert cli.main(["simulate", "--set", "operator.backend='spline'"]) == 2


def test_seed_environment_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PERTFLOW_SEED", "123")
    cli.main(["describe"])
    assert "seed = 123" in capsys.readouterr().out
    assert cli.main(["verify", "--name", "faa_di_bruno", "--out", str(tmp_path)]) == 0
    assert "seed=123" in (tmp_path / "report.txt").read_text()
    monkeypatch.setenv("PERTFLOW_SEED", "x")
    assert cli.main(["describe"]) == 2


def test_suite_fast_exit_zero(tmp_path, capsys):
    assert cli.main(["suite", "--level", "fast", "--out", str(tmp_path)]) == 0
    assert "13/13 experiments passed" in (tmp_path / "report.txt").read_text()


@pytest.mark.parametrize("name", ["default.toml", "dense_pair.toml", "zero_sensitivity.toml"])
def test_shipped_configs_resolve(name, capsys):
    from pathlib import Path

    path = Path(__file__).resolve().parent.parent / "configs" / name
    assert cli.main(["describe", "--config", str(path)]) == 0
    assert "config_hash" in capsys.readouterr().out


def test_zero_sensitivity_config_passes(tmp_path, capsys):
    from pathlib import Path

    path = Path(__file__).resolve().parent.parent / "configs" / "zero_sensitivity.toml"
    assert cli.main(["sensitivity", "--config", str(path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sensitivity_level2.csv").exists()
