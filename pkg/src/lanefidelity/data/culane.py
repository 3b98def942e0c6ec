"""
Lane file formats.

* CULane ``.lines.txt``: one lane per line, whitespace separated ``x y``
  pairs ordered bottom to top.
* Prediction JSON: ``{"lanes": [{"points": [[x, y], ...], "score", "p", "q"}]}``.
* Scene JSON: lanes and priors of a synthetic scene, optionally with features.
"""

import json
import logging
import os
from dataclasses import asdict

import numpy as np

from ..exceptions import DataError
from ..models.geometry import decode_polyline, lane_from_points, make_lane, prior_from_xs
from .synthetic import NoiseModel, Scene

logger = logging.getLogger(__name__)

FORMATS = ("culane_lines", "json")

# =============================================================================
# %% CULane lines-text
# =============================================================================

def parse_culane_lines(content, source="<string>"):
    """
    Raw point lists of a lines-text file.

    Returns
    -------
    lanes : list of np.ndarray
        ``(k, 2)`` arrays in file order; lines with fewer than 2 points are
        skipped with a warning.
    """
    lanes = []
    for lineno, line in enumerate(content.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) % 2:
            raise DataError("{0}:{1}: odd number of coordinates ({2})".format(source, lineno, len(tokens)))
        try:
            values = np.array([float(t) for t in tokens])
        except ValueError as err:
            raise DataError("{0}:{1}: {2}".format(source, lineno, err)) from err
        points = values.reshape(-1, 2)
        if len(points) < 2:
            logger.warning("%s:%d: lane with %d point(s) skipped", source, lineno, len(points))
            continue
        lanes.append(points)
    return lanes


def read_culane_lines(content, grid, source="<string>"):
    """
    Parse a lines-text file into lanes on the working grid.

    Points are linearly interpolated in ``y`` onto the grid rows each lane
    spans. Lanes covering fewer than 2 grid rows are skipped with a warning.

    Example use
    -----------
    lanes = read_culane_lines("100 300 110 200 120 100", build_grid())
    """
    lanes = []
    for lineno, points in enumerate(parse_culane_lines(content, source), start=1):
        try:
            lanes.append(lane_from_points(points, grid))
        except DataError as err:
            logger.warning("%s: lane %d skipped: %s", source, lineno, err)
    return lanes


def format_polyline(points):
    """One lines-text row, points ordered bottom to top, 4 decimals."""
    points = np.asarray(points, dtype=np.float64)
    order = np.argsort(-points[:, 1], kind="stable")
    return " ".join("{0:.4f} {1:.4f}".format(x, y) for x, y in points[order])


def write_lanes(lanes, grid):
    """Lines-text content of annotated lanes sampled at their valid grid rows."""
    return "".join(format_polyline(decode_polyline(lane, grid)) + "\n" for lane in lanes)

# =============================================================================
# %% Predictions
# =============================================================================

def write_predictions(detections, fmt="culane_lines"):
    """
    Serialise detections.

    Parameters
    ----------
    detections : list of Detection
    fmt : {"culane_lines", "json"}

    Returns
    -------
    content : str
    """
    if fmt == "culane_lines":
        return "".join(format_polyline(d.points) + "\n" for d in detections)
    if fmt == "json":
        lanes = [{"points": np.asarray(d.points, dtype=np.float64).tolist(), "score": float(d.score),
                  "p": float(d.p), "q": float(d.q)} for d in detections]
        return json.dumps({"lanes": lanes}, sort_keys=True) + "\n"
    raise ValueError("unknown prediction format '{0}', choose from {1}".format(fmt, FORMATS))


def read_predictions(content, source="<string>"):
    """Inverse of the JSON branch of :func:`write_predictions`; returns plain dicts."""
    try:
        doc = json.loads(content)
        lanes = doc["lanes"]
        return [dict(points=np.array(l["points"], dtype=np.float64).reshape(-1, 2),
                     score=float(l["score"]), p=float(l["p"]), q=float(l["q"])) for l in lanes]
    except (ValueError, KeyError, TypeError) as err:
        raise DataError("{0}: invalid prediction JSON: {1}".format(source, err)) from err

# =============================================================================
# %% Scenes
# =============================================================================

def write_scene(scene, include_features=False):
    """JSON content of a synthetic scene."""
    doc = {
        "index": int(scene.index),
        "seed": int(scene.seed),
        "gts": [{"xs": g.xs.tolist(), "start_index": int(g.start_index), "valid_length": int(g.valid_length)}
                for g in scene.gts],
        "priors": [{"xs": p.xs.tolist(), "start_index": int(p.start_index), "length": float(p.length),
                    "p": float(p.cls_confidence), "q": float(p.fidelity), "stage": int(p.stage),
                    "q_true": float(scene.q_true[j]), "source": int(scene.source[j])}
                   for j, p in enumerate(scene.priors)],
    }
    if "noise" in scene.meta:
        doc["noise"] = asdict(scene.meta["noise"])
    if include_features:
        doc["features"] = np.asarray(scene.features).tolist()
    return json.dumps(doc, sort_keys=True) + "\n"


def read_scene(content, grid, source="<string>"):
    """
    Inverse of :func:`write_scene`; residuals are recomputed from the lanes.
    Scenes written without a noise model get the default one.
    """
    try:
        doc = json.loads(content)
        gts = [make_lane(g["xs"], grid, g["start_index"], g["valid_length"]) for g in doc["gts"]]
        priors = [prior_from_xs(p["xs"], p["start_index"], p["length"], grid, p["p"], p["q"], p["stage"])
                  for p in doc["priors"]]
        q_true = np.array([p["q_true"] for p in doc["priors"]], dtype=np.float64)
        src = np.array([p["source"] for p in doc["priors"]], dtype=int)
        features = np.array(doc.get("features", []), dtype=np.float64)
        noise = NoiseModel(**doc.get("noise", {}))
    except (ValueError, KeyError, TypeError) as err:
        raise DataError("{0}: invalid scene JSON: {1}".format(source, err)) from err

    residual = np.zeros((len(priors), grid.n_points))
    for j, prior in enumerate(priors):
        if src[j] >= 0:
            residual[j] = np.where(prior.valid_mask, gts[src[j]].xs - prior.xs, 0.0)
    return Scene(gts, priors, q_true, src, residual, features, index=doc["index"], seed=doc["seed"],
                 meta={"noise": noise})

# =============================================================================
# %% Files
# =============================================================================

def save_text(path, content):
    """Write ``content`` to ``path``, creating parent directories."""
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
    except OSError as err:
        raise DataError("{0}: {1}".format(path, err.strerror or err)) from err


def load_text(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as err:
        raise DataError("{0}: {1}".format(path, err.strerror or err)) from err


def list_stems(directory, suffix=".lines.txt"):
    """Map file stem to path for every ``*suffix`` file in a directory."""
    if not os.path.isdir(directory):
        raise DataError("{0}: not a directory".format(directory))
    return {name[:-len(suffix)]: os.path.join(directory, name)
            for name in sorted(os.listdir(directory)) if name.endswith(suffix)}
