"""
Thick-polyline rasterization.

Lanes are drawn into a crop covering their bounding box (padded by the stroke
radius) rather than the full frame, and a pixel with centre ``(c, r)`` is set
when its distance to any segment is at most ``width / 2``. Crops are
compared with :func:`crop_intersection` without ever materialising the frame.
"""

import math

import numpy as np
from numba import jit

from ..exceptions import DataError, ShapeError


@jit(nopython=True)
def _draw_polyline(crop, r0, c0, xs, ys, radius):
    """Set every crop pixel within ``radius`` of the polyline (round caps and joins)."""
    H, W = crop.shape
    rr = radius * radius
    for k in range(len(xs) - 1):
        x0, y0, x1, y1 = xs[k], ys[k], xs[k + 1], ys[k + 1]
        rmin = max(r0, int(math.ceil(min(y0, y1) - radius)))
        rmax = min(r0 + H - 1, int(math.floor(max(y0, y1) + radius)))
        cmin = max(c0, int(math.ceil(min(x0, x1) - radius)))
        cmax = min(c0 + W - 1, int(math.floor(max(x0, x1) + radius)))
        dx = x1 - x0
        dy = y1 - y0
        L2 = dx * dx + dy * dy
        for r in range(rmin, rmax + 1):
            for c in range(cmin, cmax + 1):
                px = c - x0
                py = r - y0
                t = 0.0
                if L2 > 0.0:
                    t = (px * dx + py * dy) / L2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                ex = px - t * dx
                ey = py - t * dy
                if ex * ex + ey * ey <= rr:
                    crop[r - r0, c - c0] = True


@jit(nopython=True)
def _count_overlap(a, ar0, ac0, b, br0, bc0):
    r_lo = max(ar0, br0)
    r_hi = min(ar0 + a.shape[0], br0 + b.shape[0])
    c_lo = max(ac0, bc0)
    c_hi = min(ac0 + a.shape[1], bc0 + b.shape[1])
    n = 0
    for r in range(r_lo, r_hi):
        for c in range(c_lo, c_hi):
            if a[r - ar0, c - ac0] and b[r - br0, c - bc0]:
                n += 1
    return n


class LaneCrop:
    """Rasterized lane held as a boolean crop anchored at ``(r0, c0)`` of the frame."""
    __slots__ = ("r0", "c0", "mask", "count")

    def __init__(self, r0, c0, mask):
        self.r0, self.c0, self.mask = r0, c0, mask
        self.count = int(np.count_nonzero(mask))


def _check_polyline(polyline, width):
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError("polyline must have shape (k, 2), got {0}".format(pts.shape))
    if len(pts) < 2:
        raise DataError("polyline needs at least 2 points, got {0}".format(len(pts)))
    if width < 1:
        raise ValueError("stroke width must be >= 1, got {0}".format(width))
    if np.all(pts == pts[0]):
        raise DataError("degenerate polyline: all points identical")
    return pts


def rasterize_crop(polyline, width, resolution):
    """Rasterize one polyline into a :class:`LaneCrop` clipped to ``resolution = (H, W)``."""
    pts = _check_polyline(polyline, width)
    H, W = resolution
    radius = width / 2.0
    r0 = max(0, int(math.ceil(pts[:, 1].min() - radius)))
    r1 = min(H - 1, int(math.floor(pts[:, 1].max() + radius)))
    c0 = max(0, int(math.ceil(pts[:, 0].min() - radius)))
    c1 = min(W - 1, int(math.floor(pts[:, 0].max() + radius)))
    if r1 < r0 or c1 < c0:
        return LaneCrop(0, 0, np.zeros((0, 0), dtype=bool))
    crop = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    _draw_polyline(crop, r0, c0, np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), radius)
    return LaneCrop(r0, c0, crop)


def rasterize(polyline, width, resolution):
    """
    Full-frame boolean mask of a thick polyline.

    Parameters
    ----------
    polyline : array_like
        ``(k, 2)`` image points ``(x, y)``.
    width : float
        Stroke width in pixels, at least 1.
    resolution : tuple
        ``(H, W)`` of the frame.
    """
    crop = rasterize_crop(polyline, width, resolution)
    mask = np.zeros(tuple(resolution), dtype=bool)
    h, w = crop.mask.shape
    mask[crop.r0:crop.r0 + h, crop.c0:crop.c0 + w] = crop.mask
    return mask


def crop_intersection(a, b):
    """Number of pixels set in both crops."""
    if a.count == 0 or b.count == 0:
        return 0
    return int(_count_overlap(a.mask, a.r0, a.c0, b.mask, b.r0, b.c0))
