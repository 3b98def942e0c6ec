import json
import os

import numpy as np
import pytest

from lanefidelity import cli
from lanefidelity.cli import EXIT_ACCEPTANCE, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from lanefidelity.models.refine import modulate

SMALL = {"preset": "culane",
         "scene": {"n_channels": 8},
         "aglr": {"c_in": 8, "c_hidden": 8, "active_stages": [0]},
         "train": {"iterations": 2, "n_scenes": 2, "batch_scenes": 2}}


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def tree(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            with open(path) as fh:
                out[os.path.relpath(path, directory)] = fh.read()
    return out


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_synth_is_reproducible(tmp_path, small_config):
    for name in ("a", "b"):
        assert main(["synth", "--scenes", "3", "--seed", "7", "--config", small_config,
                     "--out", str(tmp_path / name)]) == EXIT_OK
    a, b = tree(str(tmp_path / "a")), tree(str(tmp_path / "b"))
    assert sorted(a) == sorted(b)
    assert "gt/00000.lines.txt" in a and "scenes/00002.json" in a
    for name in a:
        if name != "report.json":
            assert a[name] == b[name]
    report_a, report_b = read_json(str(tmp_path / "a" / "report.json")), read_json(str(tmp_path / "b" / "report.json"))
    assert report_a["results"] == report_b["results"]
    assert report_a["command"] == "synth"
    assert "timestamp" in report_a["metadata"]


def test_eval_ground_truth_against_itself(tmp_path, small_config):
    synth = str(tmp_path / "synth")
    assert main(["synth", "--scenes", "4", "--config", small_config, "--out", synth]) == EXIT_OK
    out = str(tmp_path / "eval")
    gt = os.path.join(synth, "gt")
    assert main(["eval", "--pred", gt, "--gt", gt, "--out", out, "--workers", "2"]) == EXIT_OK
    results = read_json(os.path.join(out, "report.json"))["results"]
    for key in ("0.50", "0.75", "0.90"):
        assert results[key]["f1"] == 1.0
    assert results["frames"] == 4
    assert os.path.isfile(os.path.join(out, "report.txt"))


def test_pipeline_then_eval(tmp_path, small_config):
    synth, pred = str(tmp_path / "synth"), str(tmp_path / "pred")
    assert main(["synth", "--scenes", "3", "--config", small_config, "--out", synth, "--features"]) == EXIT_OK
    assert main(["pipeline", "--scenes-dir", os.path.join(synth, "scenes"), "--config", small_config,
                 "--out", pred]) == EXIT_OK
    assert sorted(os.listdir(os.path.join(pred, "pred"))) == ["00000.lines.txt", "00001.lines.txt",
                                                              "00002.lines.txt"]
    out = str(tmp_path / "eval")
    assert main(["eval", "--pred", os.path.join(pred, "pred"), "--gt", os.path.join(synth, "gt"),
                 "--fine", "--out", out]) == EXIT_OK
    results = read_json(os.path.join(out, "report.json"))["results"]
    assert len([k for k in results if k.startswith("0.")]) == 9

    json_out = str(tmp_path / "pred_json")
    assert main(["pipeline", "--scenes", "3", "--config", small_config, "--format", "json",
                 "--offsets", "none", "--out", json_out]) == EXIT_OK
    assert main(["eval", "--pred", os.path.join(json_out, "pred"), "--gt", os.path.join(synth, "gt"),
                 "--out", str(tmp_path / "eval_json")]) == EXIT_OK


def test_train_then_pipeline_with_checkpoint(tmp_path, small_config):
    train_out = str(tmp_path / "train")
    assert main(["train-toy", "--config", small_config, "--out", train_out, "--plot"]) == EXIT_OK
    for name in ("train.ndjson", "checkpoint.json", "history.csv", "report.json", "gates.png"):
        assert os.path.isfile(os.path.join(train_out, name))
    with open(os.path.join(train_out, "train.ndjson")) as fh:
        assert len(fh.readlines()) == 2
    checkpoint = os.path.join(train_out, "checkpoint.json")
    assert main(["pipeline", "--scenes", "2", "--config", small_config, "--offsets", "checkpoint",
                 "--checkpoint", checkpoint, "--out", str(tmp_path / "pred")]) == EXIT_OK
    assert main(["pipeline", "--scenes", "2", "--config", small_config, "--offsets", "checkpoint",
                 "--out", str(tmp_path / "pred2")]) == EXIT_USAGE


def test_calib_demo_writes_scatter(tmp_path):
    out = str(tmp_path / "calib")
    assert main(["calib-demo", "--candidates", "200", "--out", out]) == EXIT_OK
    with open(os.path.join(out, "scatter.csv")) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "p_hat,q_hat,cri,q_true"
    assert len(lines) == 201
    results = read_json(os.path.join(out, "report.json"))["results"]
    assert results["pearson_gain"] == pytest.approx(results["pearson_cri"] - results["pearson_p_hat"])
    assert main(["calib-demo", "--candidates", "50", "--out", out]) == EXIT_USAGE


def test_gradcheck_exit_codes(tmp_path):
    out = str(tmp_path / "grad")
    assert main(["gradcheck", "--configs", "12", "--out", out]) == EXIT_OK
    results = read_json(os.path.join(out, "report.json"))["results"]
    assert results["passed"] is True
    assert main(["gradcheck", "--configs", "12", "--tolerance", "1e-30", "--out", out]) == EXIT_ACCEPTANCE


def test_usage_and_data_errors(tmp_path, capsys):
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["synth", "--scenes", "many"]) == EXIT_USAGE
    assert main(["synth", "--workers", "0", "--out", str(tmp_path / "w")]) == EXIT_USAGE
    assert main(["synth", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"preset": "culane", "postprocess": {"topk": 3}}')
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "s")]) == EXIT_USAGE
    assert "postprocess.topk: unknown key" in capsys.readouterr().err

    empty_pred, empty_gt = tmp_path / "p", tmp_path / "g"
    empty_pred.mkdir()
    empty_gt.mkdir()
    assert main(["eval", "--pred", str(empty_pred), "--gt", str(empty_gt), "--out", str(tmp_path / "e")]) == EXIT_DATA
    assert "no frames found" in capsys.readouterr().err
    (empty_gt / "00000.lines.txt").write_text("1 2 3 4\n")
    assert main(["eval", "--pred", str(empty_pred), "--gt", str(empty_gt), "--out", str(tmp_path / "e")]) == EXIT_DATA
    assert "missing counterparts" in capsys.readouterr().err
    assert main(["eval", "--pred", str(tmp_path / "nowhere"), "--gt", str(empty_gt),
                 "--out", str(tmp_path / "e")]) == EXIT_DATA


def test_ablate_and_bench(tmp_path, small_config):
    out = str(tmp_path / "ablate")
    assert main(["ablate", "--scenes", "3", "--config", small_config, "--out", out]) == EXIT_OK
    results = read_json(os.path.join(out, "report.json"))["results"]
    assert sorted(results["combinations"]) == ["cls_only", "cls_only+offsets", "cri", "cri+offsets"]
    assert results["threshold"] == 0.5

    out = str(tmp_path / "bench")
    assert main(["bench", "--frames", "3", "--config", small_config, "--out", out]) == EXIT_OK
    report = read_json(os.path.join(out, "report.json"))
    assert report["results"]["frames"] == 3
    assert set(report["metadata"]["timing"]["stages"]) == {"filter", "modulate", "nms", "decode", "evaluate"}
    assert main(["bench", "--frames", "3", "--budget", "0", "--check", "--config", small_config,
                 "--out", out]) == EXIT_ACCEPTANCE


def assert_same_outputs(a, b):
    tree_a, tree_b = tree(a), tree(b)
    assert sorted(tree_a) == sorted(tree_b)
    for name in tree_a:
        if name != "report.json":
            assert tree_a[name] == tree_b[name], name
    report_a, report_b = read_json(os.path.join(a, "report.json")), read_json(os.path.join(b, "report.json"))
    assert report_a["results"] == report_b["results"]


def test_every_subcommand_is_reproducible(tmp_path, small_config):
    synth = str(tmp_path / "synth")
    assert main(["synth", "--scenes", "3", "--config", small_config, "--out", synth, "--features"]) == EXIT_OK
    gt = os.path.join(synth, "gt")
    runs = {
        "pipeline": ["pipeline", "--scenes-dir", os.path.join(synth, "scenes"), "--config", small_config],
        "eval": ["eval", "--pred", gt, "--gt", gt, "--workers", "2"],
        "train-toy": ["train-toy", "--config", small_config],
        "ablate": ["ablate", "--scenes", "3", "--config", small_config],
    }
    for command, argv in runs.items():
        outs = [str(tmp_path / command / name) for name in ("a", "b")]
        for out in outs:
            assert main(argv + ["--out", out]) == EXIT_OK
        assert_same_outputs(*outs)


def test_value_errors_exit_with_usage_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(cli.COMMANDS, "gradcheck", lambda args, config: modulate(np.zeros(2), 1.5))
    assert main(["gradcheck", "--out", str(tmp_path / "g")]) == EXIT_USAGE
    assert "invalid value: q_hat must lie in [0, 1]" in capsys.readouterr().err


def test_calib_demo_reports_ranking_quality(tmp_path):
    out = str(tmp_path / "calib")
    assert main(["calib-demo", "--candidates", "300", "--top-k", "20", "--out", out]) == EXIT_OK
    results = read_json(os.path.join(out, "report.json"))["results"]
    assert results["top_k"] == 20
    for key in ("ranking_p_hat", "ranking_cri"):
        assert set(results[key]) == {"pearson_ideal", "regret_at_k", "constant_ideal"}
        assert results[key]["regret_at_k"] >= -1e-12
    assert main(["calib-demo", "--candidates", "300", "--top-k", "0", "--out", out]) == EXIT_USAGE
