import json
import logging
import os

import numpy as np
import pytest

from lanefidelity.data.culane import (format_polyline, list_stems, load_text, parse_culane_lines,
                                      read_culane_lines, read_predictions, read_scene, save_text, write_lanes,
                                      write_predictions, write_scene)
from lanefidelity.data.synthetic import NoiseModel, SceneSpec, generate_scene, scripted_offsets
from lanefidelity.exceptions import DataError
from lanefidelity.models.geometry import build_grid, make_lane
from lanefidelity.models.postprocess import Detection

GRID = build_grid(320, 800, 72)


def test_parse_errors_name_the_line():
    with pytest.raises(DataError, match="frame.txt:2: odd number"):
        parse_culane_lines("1 2 3 4\n1 2 3\n", source="frame.txt")
    with pytest.raises(DataError, match="frame.txt:1:"):
        parse_culane_lines("1 2 a 4\n", source="frame.txt")


def test_short_lanes_are_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        lanes = parse_culane_lines("\n10 20\n10 300 20 200\n")
    assert len(lanes) == 1
    assert "skipped" in caplog.text
    with caplog.at_level(logging.WARNING):
        # spans less than one row step
        assert read_culane_lines("100 101 100 102\n", GRID) == []


def test_format_polyline_orders_bottom_to_top():
    assert format_polyline([[1.0, 10.0], [2.0, 300.0]]) == "2.0000 300.0000 1.0000 10.0000"


def test_lines_roundtrip():
    rows = GRID.rows
    lanes = [make_lane(400 + 0.3 * rows - 4e-4 * rows ** 2, GRID),
             make_lane(100 + 0.7 * rows, GRID, start_index=20, valid_length=40)]
    read = read_culane_lines(write_lanes(lanes, GRID), GRID)
    assert len(read) == 2
    for a, b in zip(lanes, read):
        assert (a.start_index, a.valid_length) == (b.start_index, b.valid_length)
        np.testing.assert_allclose(b.xs[b.valid_mask], a.xs[a.valid_mask], atol=1e-4)


def test_predictions_json():
    dets = [Detection(np.array([[400.0, 0.0], [410.5, 320.0]]), 0.8, 0.9, 0.7, 3)]
    read = read_predictions(write_predictions(dets, "json"))
    assert len(read) == 1
    np.testing.assert_allclose(read[0]["points"], dets[0].points)
    assert (read[0]["score"], read[0]["p"], read[0]["q"]) == (0.8, 0.9, 0.7)
    assert write_predictions([], "culane_lines") == ""
    assert write_predictions(dets).startswith("410.5000 320.0000")
    with pytest.raises(ValueError, match="unknown prediction format"):
        write_predictions(dets, "xml")
    with pytest.raises(DataError, match="invalid prediction JSON"):
        read_predictions('{"lanes": [{"points": []}]}')


def test_scene_roundtrip():
    scene = generate_scene(SceneSpec(n_channels=4), GRID, index=5)
    read = read_scene(write_scene(scene, include_features=True), GRID)
    assert (read.index, read.seed) == (5, scene.seed)
    np.testing.assert_array_equal(read.xs, scene.xs)
    np.testing.assert_array_equal(read.source, scene.source)
    np.testing.assert_array_equal(read.q_true, scene.q_true)
    np.testing.assert_array_equal(read.features, scene.features)
    np.testing.assert_allclose(read.residual, scene.residual)
    assert read_scene(write_scene(scene), GRID).features.size == 0
    with pytest.raises(DataError, match="invalid scene JSON"):
        read_scene("{}", GRID)


def test_scene_roundtrip_keeps_noise_model():
    noise = NoiseModel(feature_scale=30.0, projection_seed=3)
    scene = generate_scene(SceneSpec(n_channels=8), GRID, noise, index=2)
    read = read_scene(write_scene(scene, include_features=True), GRID)
    assert read.meta["noise"] == noise
    np.testing.assert_allclose(scripted_offsets(read, GRID), scripted_offsets(scene, GRID))
    # files without a noise block fall back to the defaults
    doc = json.loads(write_scene(scene))
    del doc["noise"]
    assert read_scene(json.dumps(doc), GRID).meta["noise"] == NoiseModel()
    doc["noise"] = {"feature_scale": -1.0}
    with pytest.raises(DataError, match="invalid scene JSON"):
        read_scene(json.dumps(doc), GRID)


def test_file_helpers(tmp_path):
    path = os.path.join(str(tmp_path), "a", "b", "x.lines.txt")
    save_text(path, "1 2 3 4\n")
    assert load_text(path) == "1 2 3 4\n"
    save_text(os.path.join(str(tmp_path), "a", "b", "y.json"), "{}")
    assert list(list_stems(os.path.dirname(path))) == ["x"]
    with pytest.raises(DataError, match="not a directory"):
        list_stems(path)
    with pytest.raises(DataError):
        load_text(os.path.join(str(tmp_path), "missing.txt"))
