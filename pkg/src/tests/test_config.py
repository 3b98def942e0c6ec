import json

import pytest

from lanefidelity.data.config import ENV_VAR, available_presets, load_config, load_config_file
from lanefidelity.exceptions import ConfigError


def test_presets():
    assert available_presets() == ["assumed-defaults", "culane", "curvelanes"]
    culane = load_config({"preset": "culane"})
    assert (culane.cri.beta0, culane.cri.beta1) == (0.4, 0.6)
    assert culane.loss_weights.w_fid == 0.7
    assert culane.train.loss_weights == culane.loss_weights
    assert culane.scene.n_lanes == 4
    curve = load_config('{"preset": "curvelanes"}')
    assert curve.loss_weights.w_fid == 1.0
    assert curve.scene.curvature_family == "cubic"
    assert load_config({"preset": "assumed-defaults"}).postprocess.top_k == 4


def test_overrides():
    config = load_config({"preset": "culane", "postprocess": {"top_k": 6},
                          "eval": {"iou_thresholds": [0.5, 0.6]}, "train": {"iterations": 20}})
    assert config.postprocess.top_k == 6
    assert config.postprocess.nms_iou_threshold == 0.5
    assert config.eval.iou_thresholds == (0.5, 0.6)
    assert config.train.iterations == 20
    assert config.as_dict()["postprocess"]["top_k"] == 6


def test_config_errors():
    with pytest.raises(ConfigError, match="preset: missing required key"):
        load_config({"postprocess": {}})
    with pytest.raises(ConfigError, match="unknown preset"):
        load_config({"preset": "tusimple"})
    with pytest.raises(ConfigError, match="postprocess.topk: unknown key"):
        load_config({"preset": "culane", "postprocess": {"topk": 6}})
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config("{preset: culane")
    with pytest.raises(ConfigError, match="postprocess"):
        load_config({"preset": "culane", "postprocess": {"top_k": 0}})
    with pytest.raises(ConfigError, match="expected an object"):
        load_config({"preset": "culane", "cri": 0.5})


def test_lenient_mode_warns():
    with pytest.warns(UserWarning, match="postprocess.topk: unknown key"):
        config = load_config({"preset": "culane", "postprocess": {"topk": 6}}, lenient=True)
    assert config.postprocess.top_k == 4
    with pytest.warns(UserWarning, match="plots: unknown key"):
        load_config({"preset": "culane", "plots": {}}, lenient=True)


def test_config_file_and_environment(tmp_path, monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    assert load_config_file().preset == "culane"
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"preset": "curvelanes", "train": {"seed": 3}}))
    monkeypatch.setenv(ENV_VAR, str(path))
    config = load_config_file()
    assert (config.preset, config.train.seed) == ("curvelanes", 3)
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "missing.json"))
