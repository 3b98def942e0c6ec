"""
Inference post-processing: score filtering, gated-offset modulation, lane NMS
and decoding into image polylines.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from .calibrate import CriConfig, cri
from .geometry import apply_point_update, decode_polyline
from .overlap import WidthModel, iou_matrix
from .refine import ModulationConfig, modulate

logger = logging.getLogger(__name__)

SCORE_MODES = ("cls_only", "cri")


@dataclass(frozen=True)
class PostprocessConfig:
    score_threshold: float = 0.4
    nms_iou_threshold: float = 0.5
    top_k: int = 4
    score_mode: str = "cri"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1, got {0}".format(self.top_k))
        if not 0 < self.nms_iou_threshold <= 1:
            raise ValueError("nms_iou_threshold must lie in (0, 1], got {0}".format(self.nms_iou_threshold))
        if self.score_threshold < 0:
            raise ValueError("score_threshold must be >= 0, got {0}".format(self.score_threshold))
        if self.score_mode not in SCORE_MODES:
            raise ValueError("score_mode must be one of {0}, got '{1}'".format(SCORE_MODES, self.score_mode))


@dataclass(frozen=True)
class Candidate:
    """A prior that survived filtering, with its ranking score and position in the input list."""
    prior: object
    score: float
    index: int


@dataclass(frozen=True)
class Detection:
    points: np.ndarray
    score: float
    p: float
    q: float
    index: int


def score_of(prior, score_mode, cri_config=CriConfig()):
    if score_mode == "cls_only":
        return float(prior.cls_confidence)
    return cri(prior.cls_confidence, prior.fidelity, cri_config)


def filter_candidates(priors, config=PostprocessConfig(), cri_config=CriConfig()):
    """
    Score every prior and keep those at or above the threshold.

    Returns
    -------
    candidates : list of Candidate
        Sorted by score, highest first; ties keep input order.
    """
    scored = [Candidate(p, score_of(p, config.score_mode, cri_config), i) for i, p in enumerate(priors)]
    kept = [c for c in scored if c.score >= config.score_threshold]
    return sorted(kept, key=lambda c: (-c.score, c.index))


def nms(candidates, width=WidthModel(), config=PostprocessConfig(), grid=None):
    """
    Greedy lane NMS over score-sorted candidates.

    The best remaining candidate is kept and every remaining candidate whose
    unsigned overlap with it reaches ``nms_iou_threshold`` is dropped; the
    survivors are truncated to ``top_k``.
    """
    if not candidates:
        return []
    ious = iou_matrix([c.prior for c in candidates], [c.prior for c in candidates], width, grid=grid)
    alive = np.ones(len(candidates), dtype=bool)
    kept = []
    for i in range(len(candidates)):
        if not alive[i]:
            continue
        kept.append(candidates[i])
        if len(kept) == config.top_k:
            break
        alive[i + 1:] &= ious[i, i + 1:] < config.nms_iou_threshold
    logger.debug("nms kept %d of %d candidates", len(kept), len(candidates))
    return kept


def run_pipeline(priors, grid, width=WidthModel(), config=PostprocessConfig(), cri_config=CriConfig(),
                 modulation=ModulationConfig(), offsets=None, timings=None):
    """
    Filter, modulate and apply gated offsets, suppress and decode.

    Parameters
    ----------
    priors : list of LanePrior
        Final-stage priors.
    grid : SampleGrid
    offsets : np.ndarray, optional
        ``(J, N)`` gated offsets per prior; zero when omitted.
    timings : dict, optional
        Accumulates wall time per stage under ``filter``, ``modulate``,
        ``nms`` and ``decode``.

    Returns
    -------
    detections : list of Detection
        In NMS order.

    Example use
    -----------
    detections = run_pipeline(scene.priors, grid, offsets=scripted_offsets(scene, grid))
    """
    clock = _StageClock(timings)
    candidates = filter_candidates(priors, config, cri_config)
    clock.lap("filter")

    zeros = np.zeros(grid.n_points)
    refined = []
    for c in candidates:
        delta = zeros if offsets is None else modulate(offsets[c.index], c.prior.fidelity, modulation)
        refined.append(Candidate(apply_point_update(c.prior, zeros, delta), c.score, c.index))
    clock.lap("modulate")

    kept = nms(refined, width, config, grid)
    clock.lap("nms")

    detections = [Detection(decode_polyline(c.prior, grid), c.score, c.prior.cls_confidence,
                            c.prior.fidelity, c.index) for c in kept]
    clock.lap("decode")
    return detections


class _StageClock:
    def __init__(self, timings):
        self.timings = timings
        self.last = time.perf_counter()

    def lap(self, stage):
        if self.timings is None:
            return
        now = time.perf_counter()
        self.timings[stage] = self.timings.get(stage, 0.0) + now - self.last
        self.last = now
