import numpy as np
import pytest

from lanefidelity.exceptions import GradientCheckError, ShapeError
from lanefidelity.models.geometry import build_grid
from lanefidelity.models.overlap import WidthModel
from lanefidelity.models.refine import aglr_backward
from lanefidelity.optimization import gradcheck
from lanefidelity.optimization.gradcheck import gradient_suite, sample_indices
from lanefidelity.optimization.losses import (LossWeights, bce, bce_grad, fidelity_loss, fidelity_loss_grad,
                                              finite_diff_check, iou_loss, seg_ce, seg_ce_grad, smooth_l1,
                                              smooth_l1_grad, stage_average, total_loss)


def test_smooth_l1_values():
    assert smooth_l1([0.5], [0.0]) == pytest.approx(0.125)
    assert smooth_l1([3.0], [0.0]) == pytest.approx(2.5)
    assert smooth_l1([1.0, -2.0], [1.0, 0.0]) == pytest.approx(0.75)
    _, grad = smooth_l1_grad([0.5, 3.0, -3.0], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(grad, [0.5 / 3, 1 / 3, -1 / 3])
    with pytest.raises(ShapeError):
        smooth_l1([1.0, 2.0], [1.0])
    with pytest.raises(ShapeError, match="empty"):
        smooth_l1([], [])


def test_bce_values():
    assert bce(0.5, 1.0) == pytest.approx(np.log(2))
    assert bce(0.73, 0.73) == pytest.approx(0.58326, abs=1e-5)
    # clipped, finite at the boundaries
    assert np.isfinite(bce(0.0, 1.0))
    assert bce(0.0, 1.0) == pytest.approx(-np.log(1e-7))
    value, grad = bce_grad(np.array([0.0, 0.3, 1.0]), np.array([1.0, 0.3, 0.0]))
    assert value.shape == (3,)
    assert grad[0] == 0.0 and grad[2] == 0.0
    assert grad[1] == pytest.approx(0.0)


def test_fidelity_loss():
    q_hat = np.array([0.8, 0.6, 0.1, 0.2])
    q = np.array([0.9, 0.5, 0.0, 0.0])
    expected = np.mean(bce(q_hat[:2], q[:2])) + np.mean(bce(q_hat[2:], q[2:]))
    assert fidelity_loss(q_hat, q, [0, 1], [2, 3]) == pytest.approx(expected)
    # an empty set contributes nothing
    assert fidelity_loss(q_hat, q, [], [0, 1, 2, 3]) == pytest.approx(np.mean(bce(q_hat, q)))
    assert fidelity_loss(q_hat, q, [], []) == 0.0
    l1 = fidelity_loss(q_hat, q, [0, 1], [2, 3], objective="smooth_l1")
    assert l1 == pytest.approx(0.5 * (0.01 + 0.01) / 2 + 0.5 * (0.01 + 0.04) / 2)
    with pytest.raises(ValueError, match="unknown fidelity objective"):
        fidelity_loss(q_hat, q, [0], [1], objective="mse")


def test_seg_ce():
    logits = np.zeros((4, 3))
    assert seg_ce(logits, [0, 1, 2, 0]) == pytest.approx(np.log(3))
    value, grad = seg_ce_grad(np.array([[10.0, -10.0]]), [0])
    assert value == pytest.approx(np.log1p(np.exp(-20.0)))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)
    with pytest.raises(ValueError, match="out of range"):
        seg_ce(logits, [0, 1, 3, 0])


def test_iou_loss():
    grid = build_grid(320, 800, 72)
    gt = (np.full(72, 400.0), np.ones(72, dtype=bool))
    assert iou_loss(gt, gt, WidthModel(15.0)) == pytest.approx(0.0)
    assert iou_loss((np.full(72, 415.0), gt[1]), gt, WidthModel(15.0), grid) == pytest.approx(2 / 3)
    # far predictions keep a loss above one
    assert iou_loss((np.full(72, 600.0), gt[1]), gt, WidthModel(15.0)) > 1.0


def test_total_loss():
    assert total_loss([1, 1, 1, 1, 1], LossWeights()) == pytest.approx(4.7)
    assert total_loss({"reg": 2.0, "fid": 1.0}, LossWeights()) == pytest.approx(2.7)
    assert total_loss([1, 1, 1, 1, 1], LossWeights(1, 1, 1, 1, 1)) == pytest.approx(5.0)
    with pytest.raises(ShapeError):
        total_loss([1, 1, 1])
    with pytest.raises(ValueError, match="non-finite"):
        total_loss([1, np.inf, 1, 1, 1])
    with pytest.raises(ValueError, match="w_fid"):
        LossWeights(w_fid=-1.0)
    assert stage_average([1.0, 2.0, 3.0]) == pytest.approx(2.0)
    assert stage_average([]) == 0.0


def test_finite_diff_check_catches_wrong_gradient():
    def good(x):
        return float(np.sum(x ** 3)), 3 * x ** 2

    def bad(x):
        return float(np.sum(x ** 3)), 2 * x ** 2

    x = np.array([0.5, -1.2, 2.0])
    assert finite_diff_check(good, x) < 1e-6
    assert finite_diff_check(bad, x) > 0.1
    assert finite_diff_check(bad, x, indices=[]) == 0.0

    def blows_up(x):
        return float(np.sum(np.log(x))), 1 / x

    with pytest.raises(GradientCheckError):
        finite_diff_check(blows_up, np.array([1.0, 0.0]))


def test_sample_indices_cover_every_block():
    rng = np.random.default_rng(0)
    indices = sample_indices([3, 40, 1, 10], rng, n_max=20)
    assert len(indices) == 20
    assert len(np.unique(indices)) == 20
    for start, stop in [(0, 3), (3, 43), (43, 44), (44, 54)]:
        assert np.any((indices >= start) & (indices < stop))
    np.testing.assert_array_equal(sample_indices([5], rng, n_max=24), np.arange(5))
    assert len(sample_indices([100], rng, n_max=10, per_block=2)) == 10


def test_relative_floor_ignores_rounding_of_tiny_entries():
    def func(x):
        grad = np.array([1.0, 1e-12])
        return float(x @ grad) + 1e-11 * x[1] ** 2, grad

    x = np.array([0.3, 0.7])
    assert finite_diff_check(func, x, rel_floor=1e-2) < 1e-5
    # a zeroed entry is caught whatever the other entries look like
    assert finite_diff_check(lambda x: (float(np.sum(x ** 2)), np.array([2 * x[0], 0.0])), x,
                             rel_floor=1e-2) > 0.5


def test_gradient_suite():
    result = gradient_suite(n_configs=200, seed=42, eps=1e-6)
    assert result.n_configs == 200
    assert set(result.errors) == {"smooth_l1", "bce", "fidelity", "seg_ce", "iou", "refine"}
    assert result.max_error <= 1e-5


@pytest.mark.parametrize("name", ["conv1_w", "res_b", "gate_w"])
def test_gradient_suite_fails_on_missing_parameter_gradient(monkeypatch, name):
    def broken_backward(output, grad_resampled):
        grads = aglr_backward(output, grad_resampled)
        getattr(grads.params, name)[...] = 0.0
        return grads

    monkeypatch.setattr(gradcheck, "aglr_backward", broken_backward)
    result = gradient_suite(n_configs=60, seed=42, eps=1e-6)
    assert result.errors["refine"] > 1e-2
    assert result.errors["smooth_l1"] <= 1e-5
