import numpy as np
import pytest

from lanefidelity.models.calibrate import CriConfig, cri
from lanefidelity.models.geometry import build_grid, prior_from_xs
from lanefidelity.models.overlap import WidthModel, lane_iou
from lanefidelity.models.postprocess import (Candidate, PostprocessConfig, filter_candidates, nms,
                                             run_pipeline)
from lanefidelity.models.refine import ModulationConfig

GRID = build_grid(320, 800, 72)


def prior(x, p, q, start=0, length=72, slope=0.0):
    return prior_from_xs(x + slope * GRID.rows, start, length, GRID, p, q)


def brute_force_nms(candidates, width, config):
    order = sorted(candidates, key=lambda c: (-c.score, c.index))
    kept = []
    for c in order:
        if len(kept) == config.top_k:
            break
        if all(lane_iou(c.prior, k.prior, width) < config.nms_iou_threshold for k in kept):
            kept.append(c)
    return [c.index for c in kept]


def test_postprocess_config_validation():
    with pytest.raises(ValueError, match="top_k"):
        PostprocessConfig(top_k=0)
    with pytest.raises(ValueError, match="score_mode"):
        PostprocessConfig(score_mode="max")
    with pytest.raises(ValueError, match="nms_iou_threshold"):
        PostprocessConfig(nms_iou_threshold=0.0)


def test_filter_candidates_threshold_and_order():
    priors = [prior(100, 0.5, 0.5), prior(300, 0.9, 0.1), prior(500, 0.3, 1.0), prior(700, 0.9, 0.1)]
    kept = filter_candidates(priors, PostprocessConfig(score_threshold=0.4, score_mode="cls_only"))
    assert [c.index for c in kept] == [1, 3, 0]
    kept = filter_candidates(priors, PostprocessConfig(score_threshold=0.3, score_mode="cri"))
    # cri: 0.35, 0.414, 0.3, 0.414
    assert [c.index for c in kept] == [1, 3, 0, 2]
    assert kept[0].score == pytest.approx(cri(0.9, 0.1))
    assert filter_candidates([], PostprocessConfig()) == []


def test_nms_suppresses_duplicates():
    width = WidthModel(15.0)
    priors = [prior(400, 0.9, 0.9), prior(402, 0.8, 0.9), prior(200, 0.7, 0.9)]
    candidates = filter_candidates(priors, PostprocessConfig(score_threshold=0.0))
    kept = nms(candidates, width, PostprocessConfig(score_threshold=0.0))
    assert [c.index for c in kept] == [0, 2]
    kept = nms(candidates, width, PostprocessConfig(score_threshold=0.0, top_k=1))
    assert [c.index for c in kept] == [0]
    assert nms([], width) == []


def test_nms_matches_brute_force():
    rng = np.random.default_rng(42)
    width = WidthModel(15.0)
    for _ in range(500):
        n = int(rng.integers(1, 12))
        config = PostprocessConfig(score_threshold=0.0, nms_iou_threshold=float(rng.uniform(0.2, 0.8)),
                                   top_k=int(rng.integers(1, 6)))
        candidates = []
        for i in range(n):
            p = prior(rng.uniform(250, 550), 0.5, 0.5, int(rng.integers(0, 30)), slope=rng.uniform(-0.3, 0.3))
            # coarse scores so that ties occur
            candidates.append(Candidate(p, float(rng.integers(0, 5)) / 4, i))
        ordered = sorted(candidates, key=lambda c: (-c.score, c.index))
        assert [c.index for c in nms(ordered, width, config)] == brute_force_nms(candidates, width, config)


def test_fused_score_swaps_ranking_of_overlapping_pair():
    rng = np.random.default_rng(7)
    width = WidthModel(15.0)
    config = CriConfig(0.4, 0.6)
    checked = 0
    while checked < 1000:
        p_a, p_b, q_a, q_b = rng.uniform(0.01, 1.0, 4)
        if not (p_a > p_b and cri(p_a, q_a, config) < cri(p_b, q_b, config)):
            continue
        priors = [prior(400, p_a, q_a), prior(403, p_b, q_b)]
        for mode, winner in (("cls_only", 0), ("cri", 1)):
            post = PostprocessConfig(score_threshold=0.0, score_mode=mode)
            kept = nms(filter_candidates(priors, post, config), width, post, GRID)
            assert [c.index for c in kept] == [winner]
        checked += 1


def test_run_pipeline_applies_modulated_offsets():
    priors = [prior(400, 0.9, 0.25), prior(100, 0.2, 0.9)]
    offsets = np.full((2, 72), 8.0)
    config = PostprocessConfig(score_threshold=0.2)
    timings = {}
    dets = run_pipeline(priors, GRID, WidthModel(), config, CriConfig(), ModulationConfig(gamma=1.0),
                        offsets=offsets, timings=timings)
    assert [d.index for d in dets] == [0]
    np.testing.assert_allclose(dets[0].points[:, 0], 400 + 0.75 * 8.0)
    np.testing.assert_allclose(dets[0].points[:, 1], GRID.rows)
    assert dets[0].score == pytest.approx(cri(0.9, 0.25))
    assert (dets[0].p, dets[0].q) == (0.9, 0.25)
    assert set(timings) == {"filter", "modulate", "nms", "decode"}

    plain = run_pipeline(priors, GRID, config=config)
    np.testing.assert_allclose(plain[0].points[:, 0], 400.0)


def test_run_pipeline_empty_and_short_priors():
    assert run_pipeline([], GRID) == []
    dets = run_pipeline([prior(400, 0.9, 0.9, start=20, length=10.7)], GRID)
    assert dets[0].points.shape == (10, 2)
