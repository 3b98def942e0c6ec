"""
Mask-based lane evaluation: rasterize predicted and annotated lanes as thick
strokes, match them one-to-one by maximum total IoU and count true positives
at one or more IoU thresholds.
"""

import logging
import multiprocessing as mp
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from ..exceptions import DataError, ShapeError
from .raster import crop_intersection, rasterize_crop

logger = logging.getLogger(__name__)


def fine_grained_thresholds():
    """IoU thresholds 0.50, 0.55, ..., 0.90."""
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(9))


@dataclass(frozen=True)
class EvalConfig:
    """
    Parameters
    ----------
    mask_width : float
        Stroke width of the rasterized lanes in pixels.
    iou_thresholds : tuple of float
        A match counts as true positive when its IoU exceeds the threshold.
    eval_resolution : tuple of int
        ``(H, W)`` frame size lanes are rasterized at.
    strict : bool
        Use ``IoU > threshold`` (True) or ``IoU >= threshold``.
    """
    mask_width: float = 30.0
    iou_thresholds: tuple = (0.5, 0.75, 0.9)
    eval_resolution: tuple = (320, 800)
    strict: bool = True

    def __post_init__(self):
        if not self.mask_width >= 1:
            raise ValueError("mask_width must be >= 1, got {0}".format(self.mask_width))
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        object.__setattr__(self, "eval_resolution", tuple(int(v) for v in self.eval_resolution))
        if not self.iou_thresholds or any(not 0 < t <= 1 for t in self.iou_thresholds):
            raise ValueError("thresholds must lie in (0, 1], got {0}".format(self.iou_thresholds))
        if len(self.eval_resolution) != 2 or min(self.eval_resolution) < 1:
            raise ValueError("eval_resolution must be (H, W), got {0}".format(self.eval_resolution))


@dataclass
class EvalReport:
    """Aggregated counts per threshold and throughput figures."""
    counts: dict
    frames: int
    wall_time: float = 0.0
    per_frame_f1: dict = field(default_factory=dict, repr=False)

    @property
    def fps(self):
        return self.frames / self.wall_time if self.wall_time > 0 else float("nan")

    def metrics(self, threshold):
        tp, fp, fn = (self.counts[threshold][k] for k in ("tp", "fp", "fn"))
        return dict(tp=tp, fp=fp, fn=fn, **prf(tp, fp, fn))

    def f1(self, threshold=0.5):
        return self.metrics(threshold)["f1"]

    def to_dict(self):
        out = {"{0:.2f}".format(t): self.metrics(t) for t in sorted(self.counts)}
        out["frames"] = self.frames
        out["fps"] = None if np.isnan(self.fps) else self.fps
        return out

    def to_frame(self):
        """One row per threshold, as a pandas DataFrame."""
        rows = [dict(threshold=t, **self.metrics(t)) for t in sorted(self.counts)]
        return pd.DataFrame(rows).set_index("threshold")


def prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return dict(precision=precision, recall=recall, f1=f1)


def mask_iou(a, b):
    """IoU of two boolean masks of equal shape."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError("masks have shapes {0} and {1}".format(a.shape, b.shape))
    union = np.count_nonzero(a | b)
    if union == 0:
        raise DataError("both masks are empty")
    return np.count_nonzero(a & b) / union


@dataclass(frozen=True)
class Matching:
    rows: np.ndarray
    cols: np.ndarray
    total: float

    @property
    def pairs(self):
        return list(zip(self.rows.tolist(), self.cols.tolist()))


def hungarian(cost):
    """
    Minimum-cost one-to-one matching of ``min(n, m)`` pairs.

    Pairs are returned in increasing row order.

    Example use
    -----------
    hungarian([[1, 2], [2, 1]]).pairs     # [(0, 0), (1, 1)]
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError("cost must be a 2-d matrix, got shape {0}".format(cost.shape))
    if not np.all(np.isfinite(cost)):
        raise ValueError("non-finite cost entries")
    rows, cols = linear_sum_assignment(cost)
    return Matching(rows, cols, float(cost[rows, cols].sum()))

# =============================================================================
# %% Frame evaluation
# =============================================================================

def crop_iou_matrix(preds, gts):
    """IoU matrix between two lists of :class:`~lanefidelity.evaluation.raster.LaneCrop`."""
    ious = np.zeros((len(preds), len(gts)))
    for i, a in enumerate(preds):
        for j, b in enumerate(gts):
            inter = crop_intersection(a, b)
            if inter:
                ious[i, j] = inter / (a.count + b.count - inter)
    return ious


def frame_counts(preds, gts, config=EvalConfig()):
    """
    True positive, false positive and false negative counts of one frame.

    Returns
    -------
    counts : np.ndarray
        ``(T, 3)`` integer array, one ``(tp, fp, fn)`` row per threshold.
    """
    T = len(config.iou_thresholds)
    if len(gts) == 0 or len(preds) == 0:
        return np.tile([0, len(preds), len(gts)], (T, 1))
    P = [rasterize_crop(p, config.mask_width, config.eval_resolution) for p in preds]
    G = [rasterize_crop(g, config.mask_width, config.eval_resolution) for g in gts]
    ious = crop_iou_matrix(P, G)
    match = hungarian(-ious)
    matched = ious[match.rows, match.cols]
    out = np.zeros((T, 3), dtype=int)
    for t, thr in enumerate(config.iou_thresholds):
        tp = int(np.sum(matched > thr)) if config.strict else int(np.sum(matched >= thr))
        out[t] = (tp, len(preds) - tp, len(gts) - tp)
    return out


def _shard_counts(args):
    preds, gts, config = args
    return [frame_counts(p, g, config) for p, g in zip(preds, gts)]


def f1_report(preds, gts, config=EvalConfig(), processes=1, resolutions=None):
    """
    Evaluate a sequence of frames.

    Parameters
    ----------
    preds, gts : list of list of np.ndarray
        Per frame, the predicted and annotated polylines as ``(k, 2)`` arrays.
    config : EvalConfig
    processes : int
        Number of worker processes; frames are split into contiguous shards
        and their counts summed, which gives the same totals as one worker.
    resolutions : list of tuple, optional
        Per-frame ``(H, W)``; must equal ``config.eval_resolution``.

    Returns
    -------
    report : EvalReport
    """
    if len(preds) != len(gts):
        raise DataError("{0} prediction frames but {1} annotation frames".format(len(preds), len(gts)))
    if resolutions is not None:
        for i, res in enumerate(resolutions):
            if tuple(res) != config.eval_resolution:
                raise DataError("frame {0} has resolution {1}, evaluation runs at {2}".format(
                    i, tuple(res), config.eval_resolution))

    start = time.perf_counter()
    if processes > 1 and len(preds) > 1:
        bounds = np.linspace(0, len(preds), min(processes, len(preds)) + 1).astype(int)
        shards = [(preds[a:b], gts[a:b], config) for a, b in zip(bounds[:-1], bounds[1:])]
        with mp.Pool(processes=len(shards)) as pool:
            per_frame = [c for shard in pool.map(_shard_counts, shards) for c in shard]
    else:
        per_frame = _shard_counts((preds, gts, config))
    wall = time.perf_counter() - start

    total = np.sum(per_frame, axis=0) if per_frame else np.zeros((len(config.iou_thresholds), 3), dtype=int)
    counts = {thr: dict(tp=int(total[t, 0]), fp=int(total[t, 1]), fn=int(total[t, 2]))
              for t, thr in enumerate(config.iou_thresholds)}
    per_frame_f1 = {thr: np.array([prf(*c[t])["f1"] for c in per_frame])
                    for t, thr in enumerate(config.iou_thresholds)}
    logger.info("evaluated %d frames in %.3f s", len(preds), wall)
    return EvalReport(counts, len(preds), wall, per_frame_f1)


def measure_fps(pipeline, frames, repeats=3, warmup=1):
    """
    Throughput of ``pipeline(frame)`` over a list of frames.

    The ``warmup`` passes are not timed; the result is the mean over
    ``repeats`` timed passes of ``len(frames) / seconds``.
    """
    frames = list(frames)
    if not frames:
        raise DataError("no frames to time")
    for _ in range(warmup):
        for frame in frames:
            pipeline(frame)
    rates = []
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        for frame in frames:
            pipeline(frame)
        rates.append(len(frames) / max(time.perf_counter() - start, 1e-12))
    return float(np.mean(rates))
