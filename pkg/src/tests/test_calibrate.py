import numpy as np
import pytest

from lanefidelity.data.synthetic import NoiseModel, SceneSpec, calibration_population
from lanefidelity.exceptions import DataError, ShapeError
from lanefidelity.models.calibrate import (CriConfig, cri, cri_batch, ideal_score, pearson, rank_correlation,
                                           ranking_quality, softmax2)
from lanefidelity.models.geometry import build_grid


def test_softmax2():
    assert softmax2([0.0, 0.0]) == pytest.approx(0.5)
    assert softmax2([0.0, 4.0]) == pytest.approx(0.98201, abs=1e-5)
    # no overflow for large logits
    assert softmax2([1000.0, 1001.0]) == pytest.approx(softmax2([0.0, 1.0]))
    assert softmax2([0.0, 800.0]) == 1.0
    probs = [softmax2([0.0, z]) for z in np.linspace(-10, 10, 21)]
    assert np.all(np.diff(probs) > 0)
    with pytest.raises(ValueError, match="non-finite"):
        softmax2([0.0, np.nan])
    with pytest.raises(ShapeError):
        softmax2([0.0, 1.0, 2.0])


def test_cri_values():
    assert cri(1.0, 1.0) == pytest.approx(1.0)
    assert cri(0.8, 0.0) == pytest.approx(0.32)
    assert cri(0.5, 0.5, CriConfig(0.6, 0.4)) == pytest.approx(0.4)
    assert cri(0.0, 0.7) == 0.0
    with pytest.raises(ValueError, match="q must lie"):
        cri(0.5, 1.2)
    np.testing.assert_allclose(cri_batch([0.5, 1.0], [1.0, 0.5]), [0.5, 0.7])


def test_cri_config():
    assert CriConfig.from_profile("curvelanes") == CriConfig(0.6, 0.4)
    # weights need not sum to one
    CriConfig(1.0, 2.0)
    with pytest.raises(ValueError, match="non-negative"):
        CriConfig(-0.1, 0.6)
    with pytest.raises(ValueError, match="positive"):
        CriConfig(0.0, 0.0)
    with pytest.raises(ValueError, match="unknown calibration profile"):
        CriConfig.from_profile("tusimple")


def test_cri_monotone():
    rng = np.random.default_rng(0)
    p, q = rng.uniform(size=(2, 200))
    base = cri_batch(p, q)
    assert np.all(cri_batch(np.minimum(p + 0.01, 1), q) >= base)
    assert np.all(cri_batch(p, np.minimum(q + 0.01, 1)) >= base)


def test_pearson():
    x = np.arange(10.0)
    assert pearson(x, 3 * x + 1) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 500))
    assert pearson(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1])
    with pytest.raises(DataError, match="constant series"):
        pearson(np.ones(5), x[:5])
    with pytest.raises(DataError, match="at least 2"):
        pearson([1.0], [2.0])


def test_ranking_quality():
    ideal = ideal_score([1, 1, 0, 1], [0.9, 0.5, 0.8, 0.7])
    np.testing.assert_allclose(ideal, [0.9, 0.5, 0.0, 0.7])
    perfect = ranking_quality(ideal, ideal, k=2)
    assert perfect.regret_at_k == 0.0
    assert perfect.pearson == pytest.approx(1.0)
    reversed_ = ranking_quality(-ideal, ideal, k=2)
    assert reversed_.regret_at_k == pytest.approx(0.8 - 0.25)

    flat = ranking_quality(np.ones(4), ideal, k=2)
    assert flat.constant_series
    assert np.isnan(flat.pearson)
    with pytest.raises(DataError, match="at least 2 candidates"):
        ranking_quality([1.0], [1.0])


def test_fused_score_correlates_better_than_confidence():
    grid = build_grid(320, 800, 72)
    p_hat, q_hat, q_true = calibration_population(SceneSpec(seed=42), grid, NoiseModel(), 5000)
    assert len(p_hat) == 5000
    r_p = pearson(p_hat, q_true)
    r_cri = pearson(cri_batch(p_hat, q_hat), q_true)
    assert 0.2 < r_p < 0.6
    assert r_cri - r_p >= 0.10
    assert r_cri >= 0.55


def test_noiseless_aligned_population_ranks_perfectly():
    grid = build_grid(320, 800, 72)
    noise = NoiseModel(sigma_p=0.0, sigma_q=0.0, rho=0.0)
    p_hat, q_hat, q_true = calibration_population(SceneSpec(seed=3), grid, noise, 500)
    assert rank_correlation(p_hat, q_true) == pytest.approx(1.0)
    assert rank_correlation(cri_batch(p_hat, q_hat), q_true) == pytest.approx(1.0)
