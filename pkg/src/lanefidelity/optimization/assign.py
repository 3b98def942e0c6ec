"""
Label assignment during training.

Every ground-truth lane claims a dynamic number of the cheapest priors as
positives; the cost of a prior mixes its overlap with the lane and its
classification confidence.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import ShapeError

logger = logging.getLogger(__name__)

EPS = 1e-7


@dataclass(frozen=True)
class AssignConfig:
    """
    Parameters
    ----------
    lam : float
        Weight of the classification cost ``-log(p)``.
    top_t : int
        Number of best overlaps summed to size each lane's positive set.
    k_max : int
        Upper bound on positives per lane.
    """
    lam: float = 1.0
    top_t: int = 4
    k_max: int = 4

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0, got {0}".format(self.lam))
        if not 1 <= self.k_max <= self.top_t:
            raise ValueError("need 1 <= k_max <= top_t, got k_max={0}, top_t={1}".format(self.k_max, self.top_t))


@dataclass(frozen=True)
class AssignmentResult:
    positives: np.ndarray
    negatives: np.ndarray
    matched_gt: dict
    labels: np.ndarray
    soft_labels: np.ndarray


def cost_matrix(ious, cls_conf, config=AssignConfig()):
    """
    Assignment cost ``-iou + lam * (-log(max(p, EPS)))``.

    Parameters
    ----------
    ious : np.ndarray
        ``(J, K)`` unsigned overlaps between priors and lanes.
    cls_conf : np.ndarray
        ``(J,)`` classification confidences.
    """
    ious = np.asarray(ious, dtype=np.float64)
    cls_conf = np.asarray(cls_conf, dtype=np.float64)
    if ious.ndim != 2 or cls_conf.shape != (ious.shape[0],):
        raise ShapeError("ious must be (J, K) and cls_conf (J,), got {0} and {1}".format(ious.shape, cls_conf.shape))
    f_class = -np.log(np.maximum(cls_conf, EPS))
    return -ious + config.lam * f_class[:, None]


def dynamic_k(ious, config=AssignConfig()):
    """Positives per lane: rounded sum of the ``top_t`` best overlaps, clamped to ``[1, k_max]``."""
    J = ious.shape[0]
    t = min(config.top_t, J)
    top = -np.sort(-ious, axis=0)[:t]
    return np.clip(np.floor(top.sum(axis=0) + 0.5).astype(int), 1, config.k_max)


def column_candidates(cost, ious, config=AssignConfig()):
    """Per lane, the prior indices it would claim before conflicts are resolved."""
    ks = dynamic_k(ious, config)
    return [np.argsort(cost[:, k], kind="stable")[:ks[k]] for k in range(cost.shape[1])]


def dynamic_assign(cost, ious, config=AssignConfig()):
    """
    Split priors into positives and negatives and build their labels.

    A prior claimed by several lanes goes to the lane it is cheapest for,
    the lower lane index winning ties. Soft labels are the unsigned overlap
    with the matched lane for positives and 0 for negatives.

    Returns
    -------
    result : AssignmentResult
    """
    cost = np.asarray(cost, dtype=np.float64)
    ious = np.asarray(ious, dtype=np.float64)
    if cost.shape != ious.shape:
        raise ShapeError("cost and ious have shapes {0} and {1}".format(cost.shape, ious.shape))
    J, K = cost.shape
    if J < 1:
        raise ShapeError("no priors to assign")

    matched = {}
    if K > 0:
        for k, chosen in enumerate(column_candidates(cost, ious, config)):
            for j in chosen:
                j = int(j)
                if j not in matched or cost[j, k] < cost[j, matched[j]]:
                    matched[j] = k

    labels = np.zeros(J, dtype=int)
    soft = np.zeros(J)
    for j, k in matched.items():
        labels[j] = 1
        soft[j] = ious[j, k]
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    logger.debug("assigned %d positives to %d lanes out of %d priors", len(positives), K, J)
    return AssignmentResult(positives, negatives, dict(sorted(matched.items())), labels, soft)
