"""
Command-line entry point.

Every subcommand writes ``report.json`` (machine readable, with run metadata
kept under its own ``metadata`` key) and ``report.txt`` (aligned table) into
``--out``. Exit codes: 0 success, 1 usage or configuration error, 2 data
error, 3 acceptance-check failure.

Example use
-----------
lanefidelity synth --scenes 10 --seed 7 --out runs/synth
lanefidelity pipeline --scenes 10 --seed 7 --out runs/pred
lanefidelity eval --pred runs/pred/pred --gt runs/synth/gt --out runs/eval
"""

import argparse
import json
import logging
import multiprocessing as mp
import os
import sys
from dataclasses import replace
from functools import partial

import numpy as np
import pandas as pd

from .data.config import ENV_VAR, load_config_file
from .data.culane import (list_stems, load_text, parse_culane_lines, read_predictions, read_scene, save_text,
                          write_lanes, write_predictions, write_scene)
from .data.metadata import report_metadata
from .data.synthetic import calibration_population, generate_scene, scripted_offsets
from .evaluation.metrics import f1_report, fine_grained_thresholds, measure_fps
from .exceptions import AcceptanceError, ConfigError, DataError, GradientCheckError, TrainingError
from .models.calibrate import cri_batch, ideal_score, pearson, rank_correlation, ranking_quality
from .models.geometry import build_grid, decode_polyline
from .models.postprocess import run_pipeline
from .models.refine import aglr_forward, load_params, save_params
from .optimization.gradcheck import gradient_suite
from .optimization.log_training import TrainingLog, initialise_logger
from .optimization.train_toy import ToyModel, ToySetup, ablation_run, model_offsets, train

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        raise ConfigError("usage: {0}".format(message))

# =============================================================================
# %% Shared plumbing
# =============================================================================

def _to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError("not JSON serialisable: {0}".format(type(value).__name__))


def write_report(out, command, results, table, timing=None):
    """
    Write ``report.json`` and ``report.txt``.

    Wall-clock figures go under ``metadata`` with the timestamp so the rest of
    the JSON is reproducible for a fixed seed.
    """
    metadata = report_metadata(command)
    if timing is not None:
        metadata["timing"] = timing
    doc = {"command": command, "results": results, "metadata": metadata}
    save_text(os.path.join(out, "report.json"), json.dumps(doc, indent=2, sort_keys=True, default=_to_builtin) + "\n")
    text = "{0}\n{1}\n\n{2}\n".format(command, "=" * len(command), table.to_string())
    save_text(os.path.join(out, "report.txt"), text)
    print(text, end="")


def _load(args):
    config = load_config_file(args.config, lenient=args.lenient)
    if args.seed is not None:
        config = replace(config, scene=replace(config.scene, seed=args.seed),
                         train=replace(config.train, seed=args.seed))
    return config


def _grid(config):
    height, width = config.eval.eval_resolution
    return build_grid(height, width, config.aglr.n_points)


def _scenes(config, grid, n_scenes, start=0, workers=1):
    make = partial(generate_scene, config.scene, grid, config.noise, config.width)
    indices = list(range(start, start + n_scenes))
    if workers > 1 and n_scenes > 1:
        with mp.Pool(processes=min(workers, n_scenes)) as pool:
            return pool.map(make, indices)
    return [make(i) for i in indices]


def _stem(scene):
    return "{0:05d}".format(scene.index)


def _check_channels(config):
    if config.scene.n_channels != config.aglr.c_in:
        raise ConfigError("scene.n_channels ({0}) must equal aglr.c_in ({1})".format(
            config.scene.n_channels, config.aglr.c_in))


def _load_model(path):
    stages, heads = load_params(load_text(path))
    if not stages:
        raise DataError("{0}: checkpoint holds no refinement stages".format(path))
    return ToyModel(stages, heads)

# =============================================================================
# %% Subcommands
# =============================================================================

def cmd_synth(args, config):
    """Generate scenes: lane annotations as lines-text plus scene JSON."""
    grid = _grid(config)
    scenes = _scenes(config, grid, args.scenes, workers=args.workers)
    rows = []
    for scene in scenes:
        stem = _stem(scene)
        save_text(os.path.join(args.out, "gt", stem + ".lines.txt"), write_lanes(scene.gts, grid))
        save_text(os.path.join(args.out, "scenes", stem + ".json"), write_scene(scene, args.features))
        rows.append(dict(scene=stem, lanes=len(scene.gts), priors=len(scene.priors),
                         positives=int(np.sum(scene.source >= 0))))
    table = pd.DataFrame(rows).set_index("scene") if rows else pd.DataFrame()
    results = {"scenes": len(scenes), "seed": config.scene.seed, "per_scene": rows}
    write_report(args.out, "synth", results, table)
    return EXIT_OK


def cmd_pipeline(args, config):
    """Score, modulate, suppress and decode the priors of every scene."""
    grid = _grid(config)
    if args.scenes_dir:
        paths = list_stems(args.scenes_dir, ".json")
        if not paths:
            raise DataError("{0}: no frames found".format(args.scenes_dir))
        scenes = [read_scene(load_text(p), grid, p) for p in paths.values()]
    else:
        scenes = _scenes(config, grid, args.scenes, workers=args.workers)

    offset_source = None
    if args.offsets == "scripted":
        offset_source = scripted_offsets
    elif args.offsets == "checkpoint":
        if not args.checkpoint:
            raise ConfigError("--offsets checkpoint requires --checkpoint")
        _check_channels(config)
        offset_source = model_offsets(_load_model(args.checkpoint), ToySetup(grid, config.aglr, config.width,
                                                                             config.assign, config.noise))

    suffix = ".lines.txt" if args.format == "culane_lines" else ".json"
    rows = []
    for scene in scenes:
        offsets = None
        if offset_source is not None:
            if scene.features.size == 0 and len(scene.priors):
                logger.warning("scene %d carries no features, offsets skipped", scene.index)
            else:
                offsets = offset_source(scene, grid)
        dets = run_pipeline(scene.priors, grid, config.width, config.postprocess, config.cri,
                            config.modulation, offsets=offsets)
        save_text(os.path.join(args.out, "pred", _stem(scene) + suffix), write_predictions(dets, args.format))
        rows.append(dict(scene=_stem(scene), candidates=len(scene.priors), detections=len(dets)))
    table = pd.DataFrame(rows).set_index("scene") if rows else pd.DataFrame()
    results = {"scenes": len(scenes), "offsets": args.offsets, "format": args.format, "per_scene": rows}
    write_report(args.out, "pipeline", results, table)
    return EXIT_OK


def _read_frames(pred_dir, gt_dir):
    gt_paths = list_stems(gt_dir)
    pred_paths = list_stems(pred_dir)
    from_json = not pred_paths
    if from_json:
        pred_paths = list_stems(pred_dir, ".json")
    if not gt_paths and not pred_paths:
        raise DataError("no frames found")
    missing_pred = sorted(set(gt_paths) - set(pred_paths))
    missing_gt = sorted(set(pred_paths) - set(gt_paths))
    if missing_pred or missing_gt:
        raise DataError("missing counterparts: predictions for {0}; annotations for {1}".format(
            missing_pred or "none", missing_gt or "none"))
    preds, gts = [], []
    for stem in sorted(gt_paths):
        gts.append(parse_culane_lines(load_text(gt_paths[stem]), gt_paths[stem]))
        content = load_text(pred_paths[stem])
        if from_json:
            preds.append([lane["points"] for lane in read_predictions(content, pred_paths[stem])])
        else:
            preds.append(parse_culane_lines(content, pred_paths[stem]))
    return sorted(gt_paths), preds, gts


def cmd_eval(args, config):
    """F1 at fixed overlap thresholds between two directories of lane files."""
    thresholds = fine_grained_thresholds() if args.fine else (args.thresholds or config.eval.iou_thresholds)
    try:
        eval_config = replace(config.eval, iou_thresholds=tuple(thresholds))
    except ValueError as err:
        raise ConfigError("eval.iou_thresholds: {0}".format(err)) from err
    stems, preds, gts = _read_frames(args.pred, args.gt)
    report = f1_report(preds, gts, eval_config, processes=args.workers)
    results = report.to_dict()
    results.pop("fps")
    results["stems"] = len(stems)
    write_report(args.out, "eval", results, report.to_frame(),
                 timing={"wall_time": report.wall_time, "fps": results["frames"] / max(report.wall_time, 1e-12)})
    return EXIT_OK


def _ranking(quality):
    return {"pearson_ideal": None if np.isnan(quality.pearson) else quality.pearson,
            "regret_at_k": quality.regret_at_k, "constant_ideal": quality.constant_series}


def cmd_calib_demo(args, config):
    """Correlation of raw confidence and fused score with the true overlap."""
    if args.candidates < 100:
        raise ConfigError("--candidates must be >= 100, got {0}".format(args.candidates))
    if args.top_k < 1:
        raise ConfigError("--top-k must be >= 1, got {0}".format(args.top_k))
    grid = _grid(config)
    p_hat, q_hat, q_true = calibration_population(config.scene, grid, config.noise, args.candidates, config.width)
    score = cri_batch(p_hat, q_hat, config.cri)
    try:
        r_p, r_cri = pearson(p_hat, q_true), pearson(score, q_true)
        s_p, s_cri = rank_correlation(p_hat, q_true), rank_correlation(score, q_true)
    except DataError as err:
        raise DataError("degenerate population: {0}".format(err)) from err
    # a candidate is present when it would count as a match at the first threshold
    ideal = ideal_score(q_true > config.eval.iou_thresholds[0], q_true)
    rank_p = _ranking(ranking_quality(p_hat, ideal, args.top_k))
    rank_cri = _ranking(ranking_quality(score, ideal, args.top_k))

    scatter = pd.DataFrame({"p_hat": p_hat, "q_hat": q_hat, "cri": score, "q_true": q_true})
    os.makedirs(args.out, exist_ok=True)
    scatter.to_csv(os.path.join(args.out, "scatter.csv"), index=False, float_format="%.6f")
    if args.plot:
        from .visualization.calibration import calibration_scatter
        calibration_scatter(p_hat, score, q_true, os.path.join(args.out, "scatter.png"))

    results = {"candidates": args.candidates, "seed": config.scene.seed,
               "pearson_p_hat": r_p, "pearson_cri": r_cri, "pearson_gain": r_cri - r_p,
               "spearman_p_hat": s_p, "spearman_cri": s_cri,
               "top_k": min(args.top_k, args.candidates), "ranking_p_hat": rank_p, "ranking_cri": rank_cri}
    table = pd.DataFrame([dict(score="p_hat", pearson=r_p, spearman=s_p, regret_at_k=rank_p["regret_at_k"]),
                          dict(score="cri", pearson=r_cri, spearman=s_cri, regret_at_k=rank_cri["regret_at_k"])])
    write_report(args.out, "calib-demo", results, table.set_index("score"))
    if args.check and not (r_cri - r_p >= 0.10 and r_cri >= 0.55):
        raise AcceptanceError("pearson gain {0:.4f} (need >= 0.10), pearson of fused score {1:.4f} "
                              "(need >= 0.55)".format(r_cri - r_p, r_cri))
    return EXIT_OK


def cmd_gradcheck(args, config):
    """Finite-difference check of every analytic gradient."""
    seed = args.seed if args.seed is not None else config.scene.seed
    result = gradient_suite(args.configs, seed=seed, eps=args.eps)
    passed = result.max_error <= args.tolerance
    results = {"configs": result.n_configs, "eps": args.eps, "tolerance": args.tolerance,
               "max_error": result.max_error, "per_component": result.errors, "passed": passed}
    table = pd.DataFrame([dict(component=c, max_error=e) for c, e in result.errors.items()]).set_index("component")
    write_report(args.out, "gradcheck", results, table)
    if not passed:
        raise AcceptanceError("max relative error {0:.3e} above {1:.1e}".format(result.max_error, args.tolerance))
    return EXIT_OK


def cmd_train_toy(args, config):
    """Fit the refinement block on synthetic scenes."""
    _check_channels(config)
    cfg = config.train
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    if args.scenes is not None:
        cfg = replace(cfg, n_scenes=args.scenes)
    grid = _grid(config)
    setup = ToySetup(grid, config.aglr, config.width, config.assign, config.noise)
    scenes = _scenes(config, grid, cfg.n_scenes, workers=args.workers)
    with TrainingLog(os.path.join(args.out, "train.ndjson")) as log:
        result = train(scenes, setup, cfg, log=log)
    save_text(os.path.join(args.out, "checkpoint.json"), save_params(result.model.stages, result.model.heads))
    save_text(os.path.join(args.out, "history.csv"), result.history.to_dataframe().to_csv(float_format="%.8g"))

    if args.plot:
        from .visualization.calibration import gate_profile
        spawned = np.flatnonzero(scenes[0].source >= 0)
        if len(spawned):
            stage = config.aglr.active_stages[0]
            out = aglr_forward(scenes[0].features[spawned[0]], result.model.params_for(stage), grid.n_points)
            gate_profile(out.offsets, out.gates, os.path.join(args.out, "gates.png"))
    reduction = 1.0 - result.error_final / result.error_initial if result.error_initial > 0 else 0.0
    results = {"scenes": cfg.n_scenes, "iterations": cfg.iterations, "seed": cfg.seed,
               "error_initial": result.error_initial, "error_final": result.error_final,
               "reduction": reduction, "final_loss": float(result.history["loss"][-1])}
    table = pd.DataFrame([dict(stage="initial", error=result.error_initial),
                          dict(stage="final", error=result.error_final)]).set_index("stage")
    write_report(args.out, "train-toy", results, table)
    if args.check and reduction < 0.5:
        raise AcceptanceError("refinement error reduced by {0:.1%}, need at least 50%".format(reduction))
    return EXIT_OK


def cmd_ablate(args, config):
    """The four combinations of score fusion and gated offsets on held-out scenes."""
    grid = _grid(config)
    scenes = _scenes(config, grid, args.scenes, start=config.train.n_scenes, workers=args.workers)
    offset_source = None
    if args.checkpoint:
        _check_channels(config)
        offset_source = model_offsets(_load_model(args.checkpoint),
                                      ToySetup(grid, config.aglr, config.width, config.assign, config.noise))
    result = ablation_run(scenes, grid, config.width, config.postprocess, config.cri, config.modulation,
                          config.eval, offset_source)
    threshold = config.eval.iou_thresholds[0]
    table = result.table(threshold)
    results = {"scenes": args.scenes, "threshold": threshold,
               "combinations": {name: report.to_dict() for name, report in result.reports.items()},
               "p_values": {k: None if np.isnan(v) else v for k, v in result.ttests.items()}}
    for combo in results["combinations"].values():
        combo.pop("fps")
    write_report(args.out, "ablate", results, table)

    if args.check:
        f1 = table["f1"]
        best, base = f1["cri+offsets"], f1["cls_only"]
        ordered = (best >= f1["cri"] >= base) and (best >= f1["cls_only+offsets"] >= base)
        strict = all(best > f1[name] for name in f1.index if name != "cri+offsets")
        if not (ordered and strict):
            raise AcceptanceError("ablation ordering violated:\n{0}".format(table.to_string()))
    return EXIT_OK


def cmd_bench(args, config):
    """Throughput of decode, modulation, suppression and evaluation."""
    grid = _grid(config)
    scenes = _scenes(config, grid, args.frames, workers=args.workers)
    offsets = [scripted_offsets(scene, grid) for scene in scenes]
    gts = [[decode_polyline(g, grid) for g in scene.gts] for scene in scenes]

    def pipeline(i, timings=None):
        return run_pipeline(scenes[i].priors, grid, config.width, config.postprocess, config.cri,
                            config.modulation, offsets=offsets[i], timings=timings)

    pipeline_fps = measure_fps(pipeline, range(len(scenes)), repeats=args.repeats, warmup=1)
    timings = {}
    preds = [[d.points for d in pipeline(i, timings)] for i in range(len(scenes))]
    report = f1_report(preds, gts, config.eval, processes=1)
    timings["evaluate"] = report.wall_time
    total = sum(timings.values())

    results = {"frames": len(scenes), "f1": report.f1(config.eval.iou_thresholds[0])}
    timing = {"pipeline_fps": pipeline_fps, "total_seconds": total, "fps": len(scenes) / max(total, 1e-12),
              "stages": timings}
    table = pd.DataFrame([dict(stage=k, seconds=v, share=v / max(total, 1e-12)) for k, v in timings.items()])
    write_report(args.out, "bench", results, table.set_index("stage"), timing=timing)
    if args.check and total > args.budget:
        raise AcceptanceError("{0} frames took {1:.2f} s, budget {2:.2f} s".format(len(scenes), total, args.budget))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
    "calib-demo": cmd_calib_demo,
    "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}

# =============================================================================
# %% Parser
# =============================================================================

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="configuration JSON (default: ${0}, then the culane preset)".format(ENV_VAR))
    common.add_argument("--seed", type=int, default=None, help="override every seed of the configuration")
    common.add_argument("--out", default="lanefidelity-out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--lenient", action="store_true", help="warn instead of failing on unknown keys")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="lanefidelity", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help=cmd_synth.__doc__)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--features", action="store_true", help="store anchor features in the scene JSON")

    p = sub.add_parser("pipeline", parents=[common], help=cmd_pipeline.__doc__)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--scenes-dir", default=None, help="read scene JSON files instead of generating scenes")
    p.add_argument("--offsets", choices=("none", "scripted", "checkpoint"), default="scripted")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--format", choices=("culane_lines", "json"), default="culane_lines")

    p = sub.add_parser("eval", parents=[common], help=cmd_eval.__doc__)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", type=float, nargs="+", default=None)
    p.add_argument("--fine", action="store_true", help="thresholds 0.50, 0.55, ..., 0.90")

    p = sub.add_parser("calib-demo", parents=[common], help=cmd_calib_demo.__doc__)
    p.add_argument("--candidates", type=int, default=5000)
    p.add_argument("--top-k", type=int, default=100, help="ranking depth of the regret figure")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--check", action="store_true")

    p = sub.add_parser("gradcheck", parents=[common], help=cmd_gradcheck.__doc__)
    p.add_argument("--configs", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-5)

    p = sub.add_parser("train-toy", parents=[common], help=cmd_train_toy.__doc__)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--plot", action="store_true", help="plot offsets and gates of one prior")
    p.add_argument("--check", action="store_true")

    p = sub.add_parser("ablate", parents=[common], help=cmd_ablate.__doc__)
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--check", action="store_true")

    p = sub.add_parser("bench", parents=[common], help=cmd_bench.__doc__)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--budget", type=float, default=5.0, help="seconds allowed with --check")
    p.add_argument("--check", action="store_true")
    return parser


def main(argv=None):
    """Run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        level = "DEBUG" if args.verbose > 1 else "INFO" if args.verbose else "WARNING"
        initialise_logger("lanefidelity", print_to_console=False, level=level)
        config = _load(args)
        return COMMANDS[args.command](args, config)
    except ConfigError as err:
        print("configuration error: {0}".format(err), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as err:
        print("data error: {0}".format(err), file=sys.stderr)
        return EXIT_DATA
    except (AcceptanceError, GradientCheckError, TrainingError) as err:
        print("acceptance check failed: {0}".format(err), file=sys.stderr)
        return EXIT_ACCEPTANCE
    except ValueError as err:
        # parameter validators outside the configuration loader
        print("invalid value: {0}".format(err), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
