import numpy as np
import pytest

from lanefidelity.evaluation.raster import crop_intersection, rasterize, rasterize_crop
from lanefidelity.exceptions import DataError, ShapeError


def distance_oracle(polyline, width, resolution):
    """Per-pixel distance test against every segment, on the full frame."""
    H, W = resolution
    rr, cc = np.mgrid[0:H, 0:W].astype(np.float64)
    mask = np.zeros((H, W), dtype=bool)
    pts = np.asarray(polyline, dtype=np.float64)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((cc - x0) * dx + (rr - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        d2 = (cc - x0 - t * dx) ** 2 + (rr - y0 - t * dy) ** 2
        mask |= d2 <= (width / 2.0) ** 2
    return mask


def test_vertical_line_popcount():
    mask = rasterize([[400.3, 0.0], [400.3, 319.0]], 30, (320, 800))
    assert 30 * 320 * 0.95 <= mask.sum() <= 30 * 320 * 1.05
    # columns 386..415 are set on every row
    np.testing.assert_array_equal(mask[:, 386:416], True)
    assert not mask[:, :385].any() and not mask[:, 416:].any()


def test_diagonal_matches_oracle():
    line = [[100.0, 50.0], [300.0, 250.0]]
    mask = rasterize(line, 30, (320, 800))
    oracle = distance_oracle(line, 30, (320, 800))
    assert abs(int(mask.sum()) - int(oracle.sum())) <= 0.05 * oracle.sum()
    length = np.hypot(200, 200)
    assert mask.sum() == pytest.approx(30 * length + np.pi * 15 ** 2, rel=0.05)


def test_polyline_and_border_clipping():
    line = [[-20.0, 310.0], [150.0, 160.0], [170.0, -10.0]]
    mask = rasterize(line, 12, (320, 800))
    oracle = distance_oracle(line, 12, (320, 800))
    assert abs(int(mask.sum()) - int(oracle.sum())) <= 0.05 * oracle.sum()
    assert (mask & oracle).sum() >= 0.95 * oracle.sum()
    # entirely outside the frame
    assert rasterize([[-100.0, 0.0], [-90.0, 300.0]], 10, (320, 800)).sum() == 0


def test_crop_intersection_matches_full_frame():
    a_line = [[200.0, 0.0], [260.0, 319.0]]
    b_line = [[240.0, 0.0], [210.0, 319.0]]
    a, b = rasterize_crop(a_line, 30, (320, 800)), rasterize_crop(b_line, 30, (320, 800))
    full_a, full_b = rasterize(a_line, 30, (320, 800)), rasterize(b_line, 30, (320, 800))
    assert a.count == full_a.sum()
    assert crop_intersection(a, b) == (full_a & full_b).sum()
    far = rasterize_crop([[700.0, 0.0], [700.0, 100.0]], 30, (320, 800))
    assert crop_intersection(a, far) == 0


def test_rasterize_errors():
    with pytest.raises(DataError, match="degenerate"):
        rasterize([[10.0, 10.0], [10.0, 10.0]], 30, (320, 800))
    with pytest.raises(DataError, match="at least 2 points"):
        rasterize([[10.0, 10.0]], 30, (320, 800))
    with pytest.raises(ShapeError):
        rasterize([1.0, 2.0, 3.0], 30, (320, 800))
    with pytest.raises(ValueError, match="stroke width"):
        rasterize([[0.0, 0.0], [5.0, 5.0]], 0.5, (320, 800))
