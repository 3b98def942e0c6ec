"""
Confidence calibration: fuse the classification confidence of a prior with its
predicted localization fidelity into one ranking score, and measure how well a
score ranks candidates by their true overlap.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from ..exceptions import DataError, ShapeError

logger = logging.getLogger(__name__)

# (beta0, beta1) per dataset profile
CRI_PROFILES = {
    "culane": (0.4, 0.6),
    "curvelanes": (0.6, 0.4),
}


@dataclass(frozen=True)
class CriConfig:
    """Affine weighting ``beta0 + beta1 * q`` applied to the classification confidence."""
    beta0: float = 0.4
    beta1: float = 0.6

    def __post_init__(self):
        if self.beta0 < 0 or self.beta1 < 0:
            raise ValueError("beta0 and beta1 must be non-negative, got ({0}, {1})".format(self.beta0, self.beta1))
        if not self.beta0 + self.beta1 > 0:
            raise ValueError("beta0 + beta1 must be positive, got {0}".format(self.beta0 + self.beta1))

    @classmethod
    def from_profile(cls, name):
        if name not in CRI_PROFILES:
            raise ValueError("unknown calibration profile '{0}', choose from {1}".format(
                name, sorted(CRI_PROFILES)))
        return cls(*CRI_PROFILES[name])


def softmax2(logits):
    """
    Lane-class probability of a two-way (background, lane) logit pair.

    Computed as ``expit(z1 - z0)`` which is the softmax of the pair without
    overflow for large logits.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (2,):
        raise ShapeError("expected a pair of logits, got shape {0}".format(z.shape))
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits {0}".format(z.tolist()))
    return float(expit(z[1] - z[0]))


def _check_unit(name, values):
    values = np.asarray(values, dtype=np.float64)
    if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
        raise ValueError("{0} must lie in [0, 1]".format(name))
    return values


def cri(p, q, config=CriConfig()):
    """
    Fused ranking score ``p * (beta0 + beta1 * q)`` for one candidate.

    Parameters
    ----------
    p : float
        Classification confidence.
    q : float
        Predicted localization fidelity.
    config : CriConfig
    """
    p = float(_check_unit("p", p))
    q = float(_check_unit("q", q))
    return p * (config.beta0 + config.beta1 * q)


def cri_batch(p, q, config=CriConfig()):
    """Vectorised :func:`cri` over equally long arrays."""
    p = _check_unit("p", p)
    q = _check_unit("q", q)
    if p.shape != q.shape:
        raise ShapeError("p and q have shapes {0} and {1}".format(p.shape, q.shape))
    return p * (config.beta0 + config.beta1 * q)


def ideal_score(label, q):
    """Score an oracle would assign: the true overlap for positives, zero otherwise."""
    return np.asarray(label, dtype=np.float64) * np.asarray(q, dtype=np.float64)


def pearson(x, y):
    """Two-pass Pearson correlation. Raises on constant series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("pearson needs two 1-d arrays of equal length")
    if len(x) < 2:
        raise DataError("pearson needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise DataError("constant series: pearson correlation is undefined")
    return float(np.dot(dx, dy) / np.sqrt(sxx * syy))


def rank_correlation(x, y):
    """Spearman rank correlation of two scores."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError("rank_correlation needs arrays of equal shape")
    rho, _ = stats.spearmanr(x, y)
    return float(rho)


@dataclass(frozen=True)
class RankingQuality:
    """Outcome of :func:`ranking_quality`. ``pearson`` is NaN for constant series."""
    pearson: float
    regret_at_k: float
    k: int
    constant_series: bool = False


def ranking_quality(scores, ideal, k=10):
    """
    Compare a ranking score against the ideal score of the same candidates.

    ``regret_at_k`` is the mean ideal score of the oracle top-``k`` minus the
    mean ideal score of the top-``k`` ranked by ``scores`` (ties broken by
    candidate index). It is zero when ``scores`` orders like ``ideal``.

    Example use
    -----------
    q = ranking_quality(cri_batch(p, q_hat), ideal_score(y, q_true), k=20)
    """
    scores = np.asarray(scores, dtype=np.float64)
    ideal = np.asarray(ideal, dtype=np.float64)
    if scores.shape != ideal.shape or scores.ndim != 1:
        raise ShapeError("scores and ideal must be 1-d arrays of equal length")
    if len(scores) < 2:
        raise DataError("ranking quality needs at least 2 candidates, got {0}".format(len(scores)))
    k = int(min(k, len(scores)))
    if k < 1:
        raise ValueError("k must be >= 1")

    oracle = np.sort(ideal)[::-1][:k]
    ranked = np.argsort(-scores, kind="stable")[:k]
    regret = float(oracle.mean() - ideal[ranked].mean())

    try:
        r = pearson(scores, ideal)
        constant = False
    except DataError as err:
        logger.warning("%s", err)
        r, constant = float("nan"), True
    return RankingQuality(pearson=r, regret_at_k=regret, k=k, constant_series=constant)
