"""
Row-wise overlap (IoU) between lanes.

Each lane is widened to a horizontal segment ``[x - e, x + e]`` at every valid
row. Intersection and union are accumulated over rows; rows that only one of
the two lanes covers add that lane's full segment width to the union.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import DataError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WidthModel:
    """
    Half-width of the segment a lane is widened to at every row.

    Parameters
    ----------
    base_half_width : float
        Half-width ``e`` in pixels, strictly positive.
    tilt_compensated : bool
        When True, the half-width at a row becomes ``e * sqrt(1 + k**2)``
        with ``k`` the local slope dx/dy of the lane, so tilted lanes keep a
        constant width measured perpendicular to the lane.
    """
    base_half_width: float = 15.0
    tilt_compensated: bool = False

    def __post_init__(self):
        if not self.base_half_width > 0:
            raise ValueError("degenerate lane width: base_half_width must be > 0, got {0}".format(
                self.base_half_width))


def _as_arrays(lane):
    """Accept a Lane, a LanePrior or an ``(xs, mask)`` tuple."""
    if isinstance(lane, tuple):
        xs, mask = lane
        return np.asarray(xs, dtype=np.float64), np.asarray(mask, dtype=bool)
    return lane.xs, lane.valid_mask


def _slope_operator(mask, row_step):
    """Matrix ``D`` so that ``D @ xs`` is np.gradient of the valid block (zero elsewhere)."""
    n = len(mask)
    D = np.zeros((n, n))
    idx = np.flatnonzero(mask)
    if len(idx) < 2:
        return D
    first, last = idx[0], idx[-1]
    D[first, first], D[first, first + 1] = -1.0 / row_step, 1.0 / row_step
    D[last, last - 1], D[last, last] = -1.0 / row_step, 1.0 / row_step
    for i in idx[1:-1]:
        D[i, i - 1], D[i, i + 1] = -0.5 / row_step, 0.5 / row_step
    return D


def half_widths(xs, mask, width, grid=None):
    """Per-row half-width of one lane (zero outside its valid rows)."""
    e = np.where(mask, width.base_half_width, 0.0)
    if not width.tilt_compensated:
        return e
    if grid is None:
        raise ValueError("tilt-compensated widths need the sample grid")
    idx = np.flatnonzero(mask)
    if len(idx) >= 2:
        k = np.gradient(xs[idx[0]:idx[-1] + 1], grid.row_step)
        e[idx[0]:idx[-1] + 1] = width.base_half_width * np.sqrt(1.0 + k ** 2)
    return e


def _row_terms(xa, ea, xb, eb, signed):
    ra, la, rb, lb = xa + ea, xa - ea, xb + eb, xb - eb
    inter = np.minimum(ra, rb) - np.maximum(la, lb)
    if signed:
        union = np.maximum(ra, rb) - np.minimum(la, lb)
    else:
        inter = np.maximum(inter, 0.0)
        union = 2 * ea + 2 * eb - inter
    return inter, union


def lane_iou(a, b, width, signed=False, grid=None):
    """
    Row-wise IoU between two lanes.

    Parameters
    ----------
    a, b : Lane, LanePrior or tuple
        Lanes on the same grid; a tuple is read as ``(xs, valid_mask)``.
    width : WidthModel
    signed : bool
        Unsigned IoU clamps the per-row intersection at zero and lies in
        [0, 1]. The signed variant keeps negative intersections (and uses the
        spanning extent as the union) so it can go negative and stays
        informative for distant lanes; it lies in (-1, 1].
    grid : SampleGrid, optional
        Needed for tilt-compensated widths.

    Returns
    -------
    iou : float
    """
    xa, va = _as_arrays(a)
    xb, vb = _as_arrays(b)
    if xa.shape != xb.shape:
        raise ShapeError("lanes sampled at {0} and {1} rows".format(len(xa), len(xb)))
    if not (va | vb).any():
        raise DataError("no valid row in either lane")
    ea = half_widths(xa, va, width, grid)
    eb = half_widths(xb, vb, width, grid)

    both = va & vb
    inter, union = _row_terms(xa[both], ea[both], xb[both], eb[both], signed)
    I = inter.sum()
    U = union.sum() + 2 * ea[va & ~vb].sum() + 2 * eb[vb & ~va].sum()
    return float(I / U)


def lane_iou_grad(pred, gt, width, signed=True, grid=None):
    """
    IoU between a predicted and a ground-truth lane and its gradient with
    respect to the predicted x-coordinates.

    At rows where two segment ends coincide the right-hand derivative is used.
    With tilt compensation the gradient also flows through the per-row
    half-widths of the prediction.

    Returns
    -------
    iou : float
    grad : np.ndarray
        d(iou)/d(pred.xs), zero outside the valid rows of ``pred``.
    """
    xa, va = _as_arrays(pred)
    xb, vb = _as_arrays(gt)
    if xa.shape != xb.shape:
        raise ShapeError("lanes sampled at {0} and {1} rows".format(len(xa), len(xb)))
    if not (va | vb).any():
        raise DataError("no valid row in either lane")
    ea = half_widths(xa, va, width, grid)
    eb = half_widths(xb, vb, width, grid)
    both, only_a, only_b = va & vb, va & ~vb, vb & ~va

    ra, la, rb, lb = xa + ea, xa - ea, xb + eb, xb - eb
    raw = np.minimum(ra, rb) - np.maximum(la, lb)
    dI_dr = np.where(ra < rb, 1.0, 0.0)
    dI_dl = np.where(la >= lb, -1.0, 0.0)
    if signed:
        union = np.maximum(ra, rb) - np.minimum(la, lb)
        inter = raw
        dU_dr = np.where(ra >= rb, 1.0, 0.0)
        dU_dl = np.where(la < lb, -1.0, 0.0)
    else:
        inter = np.maximum(raw, 0.0)
        union = 2 * ea + 2 * eb - inter
        active = raw > 0
        dI_dr, dI_dl = dI_dr * active, dI_dl * active
        dU_dr, dU_dl = 1.0 - dI_dr, -1.0 - dI_dl

    I = inter[both].sum()
    U = union[both].sum() + 2 * ea[only_a].sum() + 2 * eb[only_b].sum()

    # r = x + e and l = x - e
    dI_dx = np.where(both, dI_dr + dI_dl, 0.0)
    dI_de = np.where(both, dI_dr - dI_dl, 0.0)
    dU_dx = np.where(both, dU_dr + dU_dl, 0.0)
    dU_de = np.where(both, dU_dr - dU_dl, 0.0) + np.where(only_a, 2.0, 0.0)

    grad_x = (dI_dx * U - I * dU_dx) / U ** 2
    if width.tilt_compensated:
        grad_e = (dI_de * U - I * dU_de) / U ** 2
        D = _slope_operator(va, grid.row_step)
        k = D @ xa
        de_dk = np.where(va, width.base_half_width * k / np.sqrt(1.0 + k ** 2), 0.0)
        grad_x = grad_x + D.T @ (de_dk * grad_e)
    return float(I / U), grad_x


def iou_matrix(priors, gts, width, signed=False, grid=None, return_disjoint=False):
    """
    Batched unsigned (or signed) IoU between ``J`` priors and ``K`` lanes.

    Pairs without any shared valid row get 0 (unsigned) and are reported at
    debug level.

    Returns
    -------
    ious : np.ndarray
        Array of shape ``(J, K)``.
    disjoint : np.ndarray, optional
        Boolean ``(J, K)`` flags of pairs without shared rows.
    """
    J, K = len(priors), len(gts)
    if J == 0 or K == 0:
        out = np.zeros((J, K))
        return (out, np.zeros((J, K), dtype=bool)) if return_disjoint else out
    XA, VA = map(np.array, zip(*[_as_arrays(p) for p in priors]))
    XB, VB = map(np.array, zip(*[_as_arrays(g) for g in gts]))
    if XA.shape[1] != XB.shape[1]:
        raise ShapeError("lanes sampled at {0} and {1} rows".format(XA.shape[1], XB.shape[1]))
    EA = np.array([half_widths(x, v, width, grid) for x, v in zip(XA, VA)])
    EB = np.array([half_widths(x, v, width, grid) for x, v in zip(XB, VB)])

    xa, ea, va = XA[:, None, :], EA[:, None, :], VA[:, None, :]
    xb, eb, vb = XB[None, :, :], EB[None, :, :], VB[None, :, :]
    both = va & vb
    inter, union = _row_terms(xa, ea, xb, eb, signed)
    I = np.where(both, inter, 0.0).sum(axis=-1)
    U = (np.where(both, union, 0.0).sum(axis=-1)
         + (2 * np.where(va & ~vb, ea, 0.0)).sum(axis=-1)
         + (2 * np.where(vb & ~va, eb, 0.0)).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        ious = np.where(U > 0, I / np.where(U > 0, U, 1.0), 0.0)

    disjoint = ~both.any(axis=-1)
    if disjoint.any():
        logger.debug("%d of %d prior/lane pairs share no valid row", int(disjoint.sum()), J * K)
    if return_disjoint:
        return ious, disjoint
    return ious
