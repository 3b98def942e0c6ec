"""
Training objective: regression, IoU, classification, fidelity and segmentation
terms, each with its analytic gradient, and a central-difference gradient
checker.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from ..exceptions import GradientCheckError, ShapeError
from ..models.overlap import lane_iou_grad

EPS = 1e-7
LOSS_TERMS = ("reg", "iou", "cls", "fid", "seg")


@dataclass(frozen=True)
class LossWeights:
    w_reg: float = 1.0
    w_iou: float = 1.0
    w_cls: float = 1.0
    w_fid: float = 0.7
    w_seg: float = 1.0

    def __post_init__(self):
        for term in LOSS_TERMS:
            if not getattr(self, "w_" + term) >= 0:
                raise ValueError("loss weight w_{0} must be >= 0".format(term))

    def as_tuple(self):
        return tuple(getattr(self, "w_" + term) for term in LOSS_TERMS)

# ~~~~~~~~~~~~~~~~~~~
# Regression
# ~~~~~~~~~~~~~~~~~~~

def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("pred and target have shapes {0} and {1}".format(pred.shape, target.shape))
    if pred.size == 0:
        raise ShapeError("empty input")
    return pred, target


def smooth_l1(pred, target):
    """Mean Smooth-L1 (Huber with unit threshold) over all elements."""
    return smooth_l1_grad(pred, target)[0]


def smooth_l1_grad(pred, target):
    pred, target = _pair(pred, target)
    d = pred - target
    small = np.abs(d) < 1.0
    value = np.where(small, 0.5 * d ** 2, np.abs(d) - 0.5).mean()
    grad = np.where(small, d, np.sign(d)) / d.size
    return float(value), grad

# ~~~~~~~~~~~~~~~~~~~
# Overlap
# ~~~~~~~~~~~~~~~~~~~

def iou_loss(pred, gt, width, grid=None):
    """``1 - signed LaneIoU`` of a predicted lane against its target."""
    return iou_loss_grad(pred, gt, width, grid)[0]


def iou_loss_grad(pred, gt, width, grid=None):
    iou, grad = lane_iou_grad(pred, gt, width, signed=True, grid=grid)
    return 1.0 - iou, -grad

# ~~~~~~~~~~~~~~~~~~~
# Cross-entropies
# ~~~~~~~~~~~~~~~~~~~

def bce(pred, target):
    """
    Binary cross-entropy of a probability against a (soft) target.

    ``pred`` is clipped to ``[EPS, 1 - EPS]``. Works element-wise on arrays.

    Example use
    -----------
    bce(0.5, 1.0)     # ln 2
    """
    return bce_grad(pred, target)[0]


def bce_grad(pred, target):
    """Value and derivative of :func:`bce` with respect to ``pred`` (zero where clipped)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.clip(pred, EPS, 1.0 - EPS)
    value = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    inside = (pred >= EPS) & (pred <= 1.0 - EPS)
    grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0)
    if value.ndim == 0:
        return float(value), float(grad)
    return value, grad


def fidelity_loss(q_hat, q, positives, negatives, objective="bce"):
    """
    Fidelity loss of one refinement stage.

    Mean loss over the positive priors plus mean loss over the negative
    priors, each set averaged on its own; an empty set contributes 0.

    Parameters
    ----------
    q_hat : array_like
        Predicted fidelity per prior.
    q : array_like
        Soft labels per prior (matched overlap for positives, 0 for negatives).
    positives, negatives : array_like of int
        Index sets partitioning the priors.
    objective : {"bce", "smooth_l1"}
        Per-prior loss.
    """
    return fidelity_loss_grad(q_hat, q, positives, negatives, objective)[0]


def fidelity_loss_grad(q_hat, q, positives, negatives, objective="bce"):
    q_hat = np.asarray(q_hat, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q_hat.shape != q.shape:
        raise ShapeError("q_hat and q have shapes {0} and {1}".format(q_hat.shape, q.shape))
    if objective == "bce":
        per, dper = bce_grad(q_hat, q)
    elif objective == "smooth_l1":
        d = q_hat - q
        small = np.abs(d) < 1.0
        per, dper = np.where(small, 0.5 * d ** 2, np.abs(d) - 0.5), np.where(small, d, np.sign(d))
    else:
        raise ValueError("unknown fidelity objective '{0}', use 'bce' or 'smooth_l1'".format(objective))
    per, dper = np.atleast_1d(per), np.atleast_1d(dper)

    value, grad = 0.0, np.zeros_like(q_hat, dtype=np.float64).reshape(-1)
    for index in (np.asarray(positives, dtype=int), np.asarray(negatives, dtype=int)):
        if len(index):
            value += per[index].mean()
            grad[index] += dper[index] / len(index)
    return float(value), grad.reshape(q_hat.shape)


def seg_ce(logits, labels):
    """Mean per-pixel softmax cross-entropy of ``(P, C)`` logits against class indices."""
    return seg_ce_grad(logits, labels)[0]


def seg_ce_grad(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("logits must be (P, C) with one label per pixel")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label out of range [0, {0})".format(logits.shape[1]))
    P = logits.shape[0]
    rows = np.arange(P)
    value = np.mean(logsumexp(logits, axis=1) - logits[rows, labels])
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return float(value), grad / P

# ~~~~~~~~~~~~~~~~~~~
# Aggregation
# ~~~~~~~~~~~~~~~~~~~

def total_loss(terms, weights=LossWeights()):
    """
    Weighted sum of the five terms.

    ``terms`` is either a mapping with keys ``reg, iou, cls, fid, seg`` or a
    sequence in that order.
    """
    if isinstance(terms, dict):
        values = [terms.get(term, 0.0) for term in LOSS_TERMS]
    else:
        values = list(terms)
        if len(values) != len(LOSS_TERMS):
            raise ShapeError("expected {0} loss terms, got {1}".format(len(LOSS_TERMS), len(values)))
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite loss term in {0}".format(values))
    return float(sum(w * v for w, v in zip(weights.as_tuple(), values)))


def stage_average(values):
    """Arithmetic mean of a per-stage loss over the stages that ran."""
    values = list(values)
    if not values:
        return 0.0
    return float(np.mean(values))

# ~~~~~~~~~~~~~~~~~~~
# Gradient checking
# ~~~~~~~~~~~~~~~~~~~

def finite_diff_check(func, point, eps=1e-6, floor=1e-8, indices=None, rel_floor=0.0):
    """
    Compare an analytic gradient against central differences.

    Parameters
    ----------
    func : callable
        ``func(x)`` returning ``(value, grad)`` for a 1-d array ``x``.
    point : array_like
        Point to check at.
    eps : float
        Central-difference step.
    floor : float
        Absolute floor of the relative-error denominator.
    indices : array_like of int, optional
        Only check these coordinates.
    rel_floor : float
        Additional floor relative to the largest gradient entry, analytic or
        numeric. Central differences of entries far below that scale are
        dominated by rounding.

    Returns
    -------
    error : float
        ``max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)``.

    Notes
    -----
    ``func`` must be differentiable at ``point``; near kinks the central
    difference straddles the two branches.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    x = np.array(point, dtype=np.float64).ravel()
    value, analytic = func(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if not (np.isfinite(value) and np.all(np.isfinite(analytic))):
        raise GradientCheckError("non-finite evaluation at the check point")
    if analytic.shape != x.shape:
        raise ShapeError("gradient has {0} entries, point has {1}".format(analytic.size, x.size))
    indices = np.arange(x.size) if indices is None else np.asarray(indices, dtype=int)

    numeric = np.empty(len(indices))
    for n, i in enumerate(indices):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp, fm = func(xp)[0], func(xm)[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientCheckError("non-finite evaluation at coordinate {0}".format(i))
        numeric[n] = (fp - fm) / (2 * eps)
    if not len(indices):
        return 0.0
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric)))
    a = analytic[indices]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), max(floor, rel_floor * scale))
    return float(np.max(np.abs(a - numeric) / denom))
