import json
import os

import numpy as np
import pytest

from optoprep import cli
from optoprep.errors import ConfigError
from optoprep.experiments import (PRESETS, ExperimentConfig, TruncationOptions, list_presets, preset_config,
                                  run, set_field, sweep)


def _custom(k=0.0, N=4, mirror=20):
    cfg = preset_config("custom")
    cfg = set_field(cfg, "params.k", k)
    cfg = set_field(cfg, "params.N", N)
    return set_field(cfg, "truncation.mirror_dim", mirror)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_round_trip_through_json(name):
    cfg = preset_config(name)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_presets_use_the_reference_parameters():
    fig1 = preset_config("fig1_squeeze").params
    assert (fig1.k, fig1.eta, fig1.N, fig1.detuning) == (1 / 400, 10.0, 11, 1)
    for name in ("fig2_wigner", "fig3_nonclassicality", "figS1_order4", "figS5_continuous_phase"):
        p = preset_config(name).params
        assert (p.k, p.eta, p.N, p.detuning) == (1 / 60, 20.0, 20, 2)
    assert preset_config("figS5_continuous_phase").schedule.kind == "continuous"
    assert list_presets() == list(PRESETS)


def test_partial_config_merges_over_preset():
    cfg = ExperimentConfig.from_dict({"preset": "fig2_wigner", "params": {"N": 5}})
    assert cfg.params.N == 5 and cfg.params.k == pytest.approx(1 / 60)
    assert cfg.truncation == preset_config("fig2_wigner").truncation


@pytest.mark.parametrize("payload", [
    {"preset": "fig2_wigner", "colour": 1},
    {"preset": "fig2_wigner", "params": {"kappa": 1.0}},
    {"preset": "nope"},
    {"params": {"k": 0.1}},
    {"preset": "custom"},
    {"preset": "fig2_wigner", "schema": "other/2"},
])
def test_bad_configs_are_rejected(payload):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(payload)


def test_set_field_validation():
    cfg = preset_config("custom")
    with pytest.raises(ConfigError):
        set_field(cfg, "params.colour", 1)
    with pytest.raises(ConfigError):
        set_field(cfg, "params.N", 2.5)
    with pytest.raises(ConfigError):
        set_field(cfg, "truncation.scan", 3)
    with pytest.raises(ConfigError):
        set_field(cfg, "k", 1)
    assert set_field(cfg, "options.q_linear", 0.0).options["q_linear"] == 0.0


def test_zero_coupling_gives_flat_output(tmp_path):
    man = run(_custom(k=0.0), str(tmp_path))
    data = np.genfromtxt(tmp_path / "custom.csv", delimiter=",", names=True)
    assert np.allclose(data["mean_n"], 0.0, atol=1e-14)
    assert np.allclose(data["dX2"], 0.5) and np.allclose(data["dP2"], 0.5)
    assert man.summary["I"] == pytest.approx(0.0, abs=1e-14)


def test_manifest_lists_the_directory(tmp_path):
    man = run(_custom(k=1 / 60), str(tmp_path))
    assert sorted(man.files) == sorted(os.listdir(tmp_path))
    written = json.loads((tmp_path / "manifest.json").read_text())
    assert written["config"]["preset"] == "custom"
    assert written["files"] == sorted(man.files)
    assert "wall_time_s" in written


def test_runs_are_deterministic(tmp_path):
    cfg = _custom(k=1 / 60)
    a, b = tmp_path / "a", tmp_path / "b"
    ma, mb = run(cfg, str(a)), run(cfg, str(b))
    for name in ma.files:
        if name != "manifest.json":
            assert (a / name).read_bytes() == (b / name).read_bytes()
    assert ma.to_dict(timing=False) == mb.to_dict(timing=False)


def test_sweep_records_failures_and_continues(tmp_path):
    cfg = _custom(k=1 / 60)
    man = sweep(cfg, "truncation.mirror_dim", [3, 20], str(tmp_path))
    assert len(man.failures) == 1 and man.failures[0]["value"] == 3
    rows = np.genfromtxt(tmp_path / "sweep_truncation_mirror_dim.csv", delimiter=",", names=True)
    assert np.isnan(rows["mean_n"][0]) and rows["mean_n"][1] > 0
    with pytest.raises(ConfigError):
        sweep(cfg, "truncation.mirror_dim", [], str(tmp_path))


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(_custom(k=1 / 60).to_json())
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "manifest.json").exists()
    assert cli.main(["validate-config", "--config", str(cfg_path)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"preset": "custom", "params": {"k": "x"}, "extra": 1}))
    assert cli.main(["validate-config", "--config", str(bad)]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["run", "--config", str(cfg_path), "--truncation-override", "3",
                     "--out", str(tmp_path / "num")]) == 2
    assert cli.main(["sweep", "--config", str(cfg_path), "--axis", "truncation.mirror_dim",
                     "--values", "3,20", "--out", str(tmp_path / "sw")]) == 3
    assert cli.main(["list-presets"]) == 0
    assert "fig2_wigner" in capsys.readouterr().out


def test_truncation_override_parsing():
    assert cli._override(TruncationOptions(120, 2, (60,)), "40,3") == TruncationOptions(40, 3, ())
    with pytest.raises(ConfigError):
        cli._override(TruncationOptions(), "a,b")
