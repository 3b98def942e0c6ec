"""
Lane and lane-prior representation on a uniform row grid.

A lane is described by its lateral coordinate at ``N`` equally spaced image
rows, together with a contiguous run of rows on which it is defined. Priors
additionally carry a start point, an angle, a (fractional) length and the two
per-prior scores used downstream: the classification confidence and the
predicted localization fidelity.
"""

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..exceptions import DataError, ShapeError

# =============================================================================
# %% Sample grid
# =============================================================================

@dataclass(frozen=True, eq=False)
class SampleGrid:
    """
    Image dimensions and the ``N`` row coordinates lanes are sampled at.

    ``rows[i] = image_height * i / (n_points - 1)``, so the first row is the
    top of the image and the last row is its bottom edge.
    """
    image_height: float
    image_width: float
    rows: np.ndarray = field(repr=False)

    @property
    def n_points(self):
        return len(self.rows)

    @property
    def row_step(self):
        return self.image_height / (self.n_points - 1)


def build_grid(image_height=320, image_width=800, n_points=72):
    """
    Build the row grid lanes are sampled on.

    Parameters
    ----------
    image_height, image_width : float
        Working resolution in pixels, both strictly positive.
    n_points : int
        Number of sample rows, at least 2.

    Returns
    -------
    grid : SampleGrid

    Example use
    -----------
    grid = build_grid(320, 800, 72)
    grid.rows[1]     # 4.507042...
    """
    if not (image_height > 0 and image_width > 0):
        raise ShapeError(
            "image dimensions must be positive, got {0}x{1}".format(image_height, image_width))
    if int(n_points) != n_points or n_points < 2:
        raise ShapeError("n_points must be an integer >= 2, got {0}".format(n_points))
    n_points = int(n_points)
    rows = float(image_height) * np.arange(n_points, dtype=np.float64) / (n_points - 1)
    rows.setflags(write=False)
    return SampleGrid(float(image_height), float(image_width), rows)

# =============================================================================
# %% Lanes and priors
# =============================================================================

def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError("lane coordinates must be one-dimensional, got shape {0}".format(arr.shape))
    arr.setflags(write=False)
    return arr


def valid_mask(n_points, start_index, length):
    """Boolean mask of the rows ``[start_index, start_index + floor(length))`` clipped to the grid."""
    mask = np.zeros(n_points, dtype=bool)
    stop = min(n_points, start_index + int(math.floor(length)))
    if stop > start_index:
        mask[start_index:stop] = True
    return mask


def _entry_geometry(xs, mask, rows):
    """Bottom-most valid point and the direction angle of the lane from there upwards."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return float("nan"), float("nan"), float("nan")
    bottom, top = idx[-1], idx[0]
    start_x, start_y = float(xs[bottom]), float(rows[bottom])
    if bottom == top:
        return start_x, start_y, math.pi / 2
    angle = math.atan2(rows[bottom] - rows[top], xs[top] - xs[bottom])
    return start_x, start_y, float(angle)


@dataclass(frozen=True, eq=False)
class Lane:
    """
    Ground-truth lane: x-coordinates at every grid row plus its valid row range.

    Values of ``xs`` outside the valid range are carried along but never used.
    """
    xs: np.ndarray
    start_index: int
    valid_length: int
    start_x: float = float("nan")
    start_y: float = float("nan")
    angle: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "xs", _frozen(self.xs))
        n = len(self.xs)
        if not (0 <= self.start_index < n):
            raise ShapeError("start_index {0} outside grid of {1} rows".format(self.start_index, n))
        if self.valid_length < 1 or self.start_index + self.valid_length > n:
            raise ShapeError("valid range [{0}, {1}) does not fit a grid of {2} rows".format(
                self.start_index, self.start_index + self.valid_length, n))

    @property
    def n_points(self):
        return len(self.xs)

    @property
    def valid_mask(self):
        return valid_mask(self.n_points, self.start_index, self.valid_length)


@dataclass(frozen=True, eq=False)
class LanePrior:
    """
    Lane proposal produced by the detector and refined over up to three stages.

    Attributes
    ----------
    start_x, start_y : float
        Entry point of the prior in image coordinates.
    angle : float
        Direction angle in radians.
    length : float
        Number of valid rows counted from ``start_index``; truncated when
        converted to a row range.
    xs : np.ndarray
        Lateral coordinate at every grid row.
    cls_confidence : float
        Classification confidence, in [0, 1].
    fidelity : float
        Predicted localization fidelity, in [0, 1].
    stage : int
        Refinement stage the prior was produced by, 0, 1 or 2.
    start_index : int
        First valid row.
    """
    start_x: float
    start_y: float
    angle: float
    length: float
    xs: np.ndarray
    cls_confidence: float = 0.0
    fidelity: float = 0.0
    stage: int = 0
    start_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "xs", _frozen(self.xs))
        n = len(self.xs)
        if not (0.0 <= self.cls_confidence <= 1.0):
            raise ValueError("cls_confidence must lie in [0, 1], got {0}".format(self.cls_confidence))
        if not (0.0 <= self.fidelity <= 1.0):
            raise ValueError("fidelity must lie in [0, 1], got {0}".format(self.fidelity))
        if not (0.0 <= self.length <= n):
            raise ShapeError("length must lie in [0, {0}], got {1}".format(n, self.length))
        if self.stage not in (0, 1, 2):
            raise ValueError("stage must be 0, 1 or 2, got {0}".format(self.stage))
        if not (0 <= self.start_index < n):
            raise ShapeError("start_index {0} outside grid of {1} rows".format(self.start_index, n))

    @property
    def n_points(self):
        return len(self.xs)

    @property
    def valid_mask(self):
        return valid_mask(self.n_points, self.start_index, self.length)


def make_lane(xs, grid, start_index=0, valid_length=None):
    """
    Build a :class:`Lane` and fill in its entry point and angle from the grid.

    Valid coordinates must stay within ``[-W, 2W]`` of the image width and
    the lane needs at least 2 valid rows.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) != grid.n_points:
        raise ShapeError("expected {0} coordinates, got {1}".format(grid.n_points, len(xs)))
    if valid_length is None:
        valid_length = grid.n_points - start_index
    if valid_length < 2:
        raise DataError("a lane needs at least 2 valid rows, got {0}".format(valid_length))
    mask = valid_mask(grid.n_points, start_index, valid_length)
    band = xs[mask]
    if np.any(~np.isfinite(band)) or np.any(band < -grid.image_width) or np.any(band > 2 * grid.image_width):
        raise DataError("lane coordinates leave the off-image band [{0}, {1}]".format(
            -grid.image_width, 2 * grid.image_width))
    sx, sy, angle = _entry_geometry(xs, mask, grid.rows)
    return Lane(xs, int(start_index), int(valid_length), sx, sy, angle)


def prior_from_xs(xs, start_index, length, grid, cls_confidence=0.0, fidelity=0.0, stage=0):
    """Build a :class:`LanePrior` whose start point and angle follow from its coordinates."""
    xs = np.asarray(xs, dtype=np.float64)
    mask = valid_mask(len(xs), start_index, length)
    sx, sy, angle = _entry_geometry(xs, mask, grid.rows)
    return LanePrior(sx, sy, angle, float(length), xs, float(cls_confidence), float(fidelity),
                     int(stage), int(start_index))

# =============================================================================
# %% Updates
# =============================================================================

def _check_length(name, values, n):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n,):
        raise ShapeError("{0} has shape {1}, expected ({2},)".format(name, values.shape, n))
    return values


def apply_prior_update(prior, dx, dy, dtheta, dX):
    """
    Global update of a prior: shift the start point, rotate, and add a per-row offset.

    The returned prior keeps length, scores and valid range of the input.
    """
    dX = _check_length("dX", dX, prior.n_points)
    return replace(prior,
                   start_x=prior.start_x + dx,
                   start_y=prior.start_y + dy,
                   angle=prior.angle + dtheta,
                   xs=prior.xs + dX)


def apply_point_update(prior, dX, dX_sr):
    """Point-wise update ``X' = X + dX + dX_sr`` used after the local refinement head."""
    dX = _check_length("dX", dX, prior.n_points)
    dX_sr = _check_length("dX_sr", dX_sr, prior.n_points)
    return replace(prior, xs=prior.xs + dX + dX_sr)

# =============================================================================
# %% Resampling
# =============================================================================

@functools.lru_cache(maxsize=64)
def resampling_matrix(m, n):
    """
    Linear interpolation matrix mapping ``m`` uniformly spaced values onto ``n``.

    Row ``j`` holds the weights of output sample ``j``, which sits at source
    position ``j * (m - 1) / (n - 1)``. Endpoints map exactly onto endpoints and
    ``m == n`` gives the identity.

    Returns
    -------
    R : np.ndarray
        Read-only array of shape ``(n, m)``.
    """
    if m < 2 or n < 2:
        raise ShapeError("resampling needs at least 2 samples on both sides, got {0} -> {1}".format(m, n))
    j = np.arange(n, dtype=np.float64)
    pos = j * (m - 1) / (n - 1)
    i0 = np.minimum(np.floor(pos).astype(int), m - 2)
    w = pos - i0
    R = np.zeros((n, m))
    R[np.arange(n), i0] = 1.0 - w
    R[np.arange(n), i0 + 1] += w
    R.setflags(write=False)
    return R


def resample_linear(values, n):
    """
    Linearly resample ``values`` along their last axis to ``n`` samples.

    Example use
    -----------
    resample_linear(np.arange(36.0), 72)
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] < 2:
        raise ShapeError("cannot resample fewer than 2 samples")
    return values @ resampling_matrix(values.shape[-1], int(n)).T

# =============================================================================
# %% Conversion to and from point lists
# =============================================================================

def decode_polyline(prior, grid):
    """
    Convert a lane or prior into its list of image points.

    Returns
    -------
    points : np.ndarray
        Array of shape ``(k, 2)`` with ``(x, y)`` rows for the ``k`` valid rows,
        ordered top to bottom.
    """
    if prior.n_points != grid.n_points:
        raise ShapeError("lane has {0} rows, grid has {1}".format(prior.n_points, grid.n_points))
    mask = prior.valid_mask
    if mask.sum() < 2:
        raise DataError("lane has fewer than 2 valid rows")
    return np.column_stack([prior.xs[mask], grid.rows[mask]])


def lane_from_points(points, grid, snap_tolerance=1e-3):
    """
    Sample an annotated polyline at the grid rows it spans.

    Point ``y`` values within ``snap_tolerance`` of a grid row are snapped onto
    it, so polylines written from grid samples read back exactly.

    Parameters
    ----------
    points : array_like
        ``(k, 2)`` array of ``(x, y)`` image points in any order.
    grid : SampleGrid

    Returns
    -------
    lane : Lane
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError("points must have shape (k, 2), got {0}".format(points.shape))
    if len(points) < 2:
        raise DataError("a lane needs at least 2 points, got {0}".format(len(points)))
    order = np.argsort(points[:, 1], kind="stable")
    xs, ys = points[order, 0], points[order, 1].copy()

    nearest = np.clip(np.round(ys / grid.row_step).astype(int), 0, grid.n_points - 1)
    close = np.abs(grid.rows[nearest] - ys) < snap_tolerance
    ys[close] = grid.rows[nearest[close]]

    inside = (grid.rows >= ys[0] - snap_tolerance) & (grid.rows <= ys[-1] + snap_tolerance)
    idx = np.flatnonzero(inside)
    if len(idx) < 2:
        raise DataError("lane spans fewer than 2 grid rows")
    lane_xs = np.interp(grid.rows, ys, xs)
    return make_lane(lane_xs, grid, int(idx[0]), len(idx))
