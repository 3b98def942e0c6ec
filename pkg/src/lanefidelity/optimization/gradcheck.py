"""
Randomised finite-difference checks of every analytic gradient in the package.

Each configuration draws a random instance of one component (Smooth-L1, BCE,
fidelity loss, segmentation cross-entropy, IoU loss, or the refinement block
followed by a Smooth-L1 loss) and compares its analytic gradient against
central differences.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..models.geometry import build_grid
from ..models.overlap import WidthModel
from ..models.refine import PARAM_NAMES, AglrParams, aglr_backward, aglr_forward, init_params
from .losses import (bce_grad, fidelity_loss_grad, finite_diff_check, iou_loss_grad, seg_ce_grad,
                     smooth_l1_grad)

logger = logging.getLogger(__name__)

COMPONENTS = ("smooth_l1", "bce", "fidelity", "seg_ce", "iou", "refine")
REL_FLOOR = 1e-2


@dataclass(frozen=True)
class GradcheckResult:
    errors: dict
    max_error: float
    n_configs: int


def sample_indices(block_sizes, rng, n_max=24, per_block=4):
    """
    Coordinates to check, drawn at random and independently of any gradient.

    Every block of a flattened parameter vector contributes up to
    ``per_block`` coordinates; the rest of the ``n_max`` budget is drawn
    from the remaining coordinates.
    """
    offsets = np.concatenate([[0], np.cumsum(block_sizes)]).astype(int)
    chosen = []
    for start, stop in zip(offsets[:-1], offsets[1:]):
        if stop > start:
            chosen.extend(rng.choice(np.arange(start, stop), min(per_block, stop - start), replace=False))
    rest = np.setdiff1d(np.arange(offsets[-1]), chosen)
    n_extra = min(max(n_max - len(chosen), 0), len(rest))
    if n_extra:
        chosen.extend(rng.choice(rest, n_extra, replace=False))
    return np.sort(np.asarray(chosen, dtype=int))


def _check(func, x, eps, rng, block_sizes=None):
    indices = sample_indices(block_sizes or [len(x)], rng)
    return finite_diff_check(func, x, eps, indices=indices, rel_floor=REL_FLOOR)

# ~~~~~~~~~~~~~~~~~~~
# Component cases
# ~~~~~~~~~~~~~~~~~~~

def _smooth_l1_case(rng, eps):
    n = int(rng.integers(3, 20))
    target = rng.normal(0, 2, n)
    d = rng.normal(0, 2, n)
    d[np.abs(np.abs(d) - 1.0) < 1e-3] += 0.01
    d[np.abs(d) < 1e-2] += 0.05
    return _check(lambda x: smooth_l1_grad(x, target), target + d, eps, rng)


def _bce_case(rng, eps):
    n = int(rng.integers(1, 10))
    t = rng.uniform(0, 1, n)

    def func(x):
        value, grad = bce_grad(x, t)
        return float(np.sum(value)), grad
    return _check(func, rng.uniform(0.02, 0.98, n), eps, rng)


def _fidelity_case(rng, eps):
    n = int(rng.integers(2, 12))
    q = rng.uniform(0, 1, n)
    perm = rng.permutation(n)
    cut = int(rng.integers(0, n + 1))
    pos, neg = np.sort(perm[:cut]), np.sort(perm[cut:])
    q[neg] = 0.0
    objective = "bce" if rng.uniform() < 0.7 else "smooth_l1"
    return _check(lambda x: fidelity_loss_grad(x, q, pos, neg, objective), rng.uniform(0.02, 0.98, n), eps, rng)


def _seg_case(rng, eps):
    P, C = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    labels = rng.integers(0, C, P)

    def func(x):
        value, grad = seg_ce_grad(x.reshape(P, C), labels)
        return value, grad.ravel()
    return _check(func, rng.normal(0, 2, P * C), eps, rng)


def _iou_case(rng, eps, grid):
    width = WidthModel(float(rng.uniform(5, 20)))
    e = width.base_half_width
    n = grid.n_points
    for _ in range(20):
        gt_xs = 400 + rng.normal(0, 40) + rng.normal(0, 0.3) * grid.rows
        pred = gt_xs + rng.normal(0, e) + rng.normal(0, 0.5 * e) * grid.rows / grid.image_height
        s_g, s_p = int(rng.integers(0, n // 3)), int(rng.integers(0, n // 3))
        vg = np.zeros(n, dtype=bool)
        vp = np.zeros(n, dtype=bool)
        vg[s_g:] = True
        vp[s_p:] = True
        both = vg & vp
        # stay clear of rows where interval ends meet
        gap = np.abs(pred - gt_xs)[both]
        if np.all(gap > 1e-3) and np.all(np.abs(gap - 2 * e) > 1e-3):
            break
    func = lambda x: iou_loss_grad((x, vp), (gt_xs, vg), width, grid)
    return _check(func, pred, eps, rng)


def _refine_case(rng, eps):
    c_in = int(rng.choice([1, 4, 8]))
    S = int(rng.choice([4, 8, 36]))
    N = int(rng.choice([S, 2 * S - 1, 72]))
    c_h = 4
    params = init_params(rng, c_in, c_h, gate_bias=rng.normal(-1, 1), offset_scale=1.0)
    params.conv1_b[:] = rng.normal(0, 0.5, c_h)
    params.conv2_b[:] = rng.normal(0, 0.5, c_h)
    params.res_b[:] = rng.normal(0, 0.5, c_h)
    feature = rng.normal(0, 1, (c_in, S))
    prior = rng.normal(0, 1, N)
    target = rng.normal(0, 2, N)
    shapes = [getattr(params, name).shape for name in PARAM_NAMES] + [feature.shape]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(x):
        parts, offset = [], 0
        for shape, size in zip(shapes, sizes):
            parts.append(x[offset:offset + size].reshape(shape))
            offset += size
        return AglrParams(**dict(zip(PARAM_NAMES, parts[:-1]))), parts[-1]

    def func(x):
        p, f = unpack(x)
        out = aglr_forward(f, p, N)
        value, grad = smooth_l1_grad(prior + out.resampled, target)
        grads = aglr_backward(out, grad)
        flat = [getattr(grads.params, name).ravel() for name in PARAM_NAMES] + [grads.feature.ravel()]
        return value, np.concatenate(flat)

    x = np.concatenate([getattr(params, name).ravel() for name in PARAM_NAMES] + [feature.ravel()])
    return _check(func, x, eps, rng, sizes)


def gradient_suite(n_configs=200, seed=42, eps=1e-6):
    """
    Run ``n_configs`` random gradient checks, cycling over the components.

    Returns
    -------
    result : GradcheckResult
        Largest relative error per component and overall.

    Example use
    -----------
    result = gradient_suite(200, seed=42)
    assert result.max_error <= 1e-5
    """
    grid = build_grid(320, 800, 72)
    errors = {c: 0.0 for c in COMPONENTS}
    for i in range(n_configs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        component = COMPONENTS[i % len(COMPONENTS)]
        if component == "smooth_l1":
            err = _smooth_l1_case(rng, eps)
        elif component == "bce":
            err = _bce_case(rng, eps)
        elif component == "fidelity":
            err = _fidelity_case(rng, eps)
        elif component == "seg_ce":
            err = _seg_case(rng, eps)
        elif component == "iou":
            err = _iou_case(rng, eps, grid)
        else:
            err = _refine_case(rng, eps)
        errors[component] = max(errors[component], err)
    max_error = max(errors.values())
    logger.info("gradient check over %d configurations: max relative error %.3e", n_configs, max_error)
    return GradcheckResult(errors, max_error, n_configs)
