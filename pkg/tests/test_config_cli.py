import csv
import filecmp
import json
import os

import numpy as np
import pytest
import yaml

from sdretrack.camera import CalibratedOutputModel, load_calibrated_model
from sdretrack.cli import main
from sdretrack.config import config_from_dict, load_config, with_overrides

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

SMALL = {
    "scenario": {"duration": 0.3, "dt": 0.001, "meas_noise_std": [1e-4, 1e-4]},
    "filter": {"Q": [1e-8, 1e-8, 1e-8], "R": [1e-3, 1e-3], "P0": [1.0, 1.0, 0.01], "switch_period": 50},
    "montecarlo": {"runs": 3, "vc_range": [0.8, 1.2]},
    "analysis": {"samples": 1000, "window": 20},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(CONFIGS) if f.endswith(".yaml")))
def test_shipped_configs_load(name):
    path = os.path.join(CONFIGS, name)
    if name == "calibrated_model.yaml":
        m = load_calibrated_model(path)
        assert m.is_monotone()
    elif name == "rig.yaml":
        from sdretrack.camera import load_rig
        assert load_rig(path).f_x > 0
    else:
        load_config(path)


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="unknown"):
        config_from_dict({"scenario": {"durration": 1.0}})
    with pytest.raises(ValueError, match="unknown"):
        config_from_dict({"plots": {}})
    with pytest.raises(ValueError, match="unknown"):
        config_from_dict({"filter": {"gain": 1.0}})


def test_defaults_and_overrides():
    cfg = load_config(None)
    assert cfg.filter.switch_period == 50
    cfg2 = with_overrides(cfg, seed=7, vc_scale=(0.8, 0.8, 0.8))
    assert cfg2.scenario.seed == 7 and cfg2.scenario.vc_scale == (0.8, 0.8, 0.8)
    assert cfg.scenario.seed == 0


def test_vc080_config_scales_velocity():
    cfg = load_config(os.path.join(CONFIGS, "vc080.yaml"))
    assert cfg.scenario.vc_scale == (0.8, 0.8, 0.8)


def test_simulate_cli(tmp_path, small_config):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", small_config, "--out-dir", str(out)]) == 0
    files = set(os.listdir(out))
    assert files
    assert any(f.endswith(".json") for f in files)


def test_montecarlo_cli(tmp_path, small_config):
    out = tmp_path / "mc"
    assert main(["montecarlo", "--config", small_config, "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["vc_range"] == [0.8, 1.2]
    with open(out / "aggregate.csv") as fh:
        assert len(list(csv.reader(fh))) > 1


def test_analyze_cli(tmp_path, small_config):
    out = tmp_path / "an"
    assert main(["analyze", "--config", small_config, "--out-dir", str(out)]) == 0
    rep = json.loads((out / "certificate.json").read_text())
    assert set(rep["certificates"]) | set(rep["errors"]) == {"switched", "sdre"}
    assert rep["gramian"]["windows"]


def test_track_cli(tmp_path):
    scene = tmp_path / "scene"
    assert main(["synth-scene", "--duration", "2", "--out-dir", str(scene)]) == 0
    out = tmp_path / "trk"
    assert main(["track", "--detections", str(scene / "detections.csv"), "--ego", str(scene / "ego.csv"),
                 "--radar", str(scene / "radar.csv"), "--out-dir", str(out)]) == 0
    ev = json.loads((out / "evaluation.json").read_text())
    assert ev["evaluation"]["matched"] > 0
    assert (out / "track_1.csv").exists() and (out / "track_2.csv").exists()


def test_calibrate_cli_recovers_model(tmp_path):
    truth = CalibratedOutputModel()
    Z = np.linspace(2, 95, 60)
    ratio = np.linspace(-0.1, 0.1, 60)
    path = tmp_path / "samples.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth_m", "lateral_ratio", "pixel_row", "pixel_col"])
        for z, r in zip(Z, ratio):
            w.writerow([z, r, float(truth.row_from_depth(z)), float(truth.col_from_ratio(r))])
    out = tmp_path / "model.yaml"
    assert main(["calibrate", "--samples", str(path), "--out", str(out)]) == 0
    fitted = load_calibrated_model(out)
    assert np.allclose(fitted.row_from_depth(Z), truth.row_from_depth(Z), atol=1e-3)


def test_cli_errors_return_nonzero(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml"), "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: {bogus: 1}\n")
    assert main(["analyze", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_cli_is_deterministic(tmp_path, small_config):
    for run in ("a", "b"):
        d = tmp_path / run
        main(["simulate", "--config", small_config, "--out-dir", str(d / "sim")])
        main(["montecarlo", "--config", small_config, "--out-dir", str(d / "mc")])
        main(["synth-scene", "--duration", "2", "--jitter", "0.5", "--seed", "3", "--out-dir", str(d / "scene")])
    for sub in ("sim", "mc", "scene"):
        cmp = filecmp.dircmp(tmp_path / "a" / sub, tmp_path / "b" / sub)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        for f in cmp.common_files:
            assert filecmp.cmp(tmp_path / "a" / sub / f, tmp_path / "b" / sub / f, shallow=False)
