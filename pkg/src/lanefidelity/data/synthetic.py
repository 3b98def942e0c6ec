"""
Synthetic lane scenes.

A scene holds a handful of annotated lanes and a population of priors: each
lane spawns jittered copies of itself and a few unrelated background priors
are scattered across the image. Every prior gets

* its true overlap ``q_true`` with the lane it was spawned from,
* a classification confidence that only partly follows ``q_true``,
* a noisy fidelity estimate around ``q_true``,
* anchor features: the residual lateral error at ``S`` sample points passed
  through fixed random projections, plus noise.

Everything is a deterministic function of the scene seed and index.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from ..exceptions import ShapeError
from ..models.geometry import make_lane, prior_from_xs, resample_linear
from ..models.overlap import WidthModel, iou_matrix, lane_iou

logger = logging.getLogger(__name__)

CURVATURE_FAMILIES = ("straight", "arc", "cubic", "s-curve")


@dataclass(frozen=True)
class SceneSpec:
    """
    Parameters
    ----------
    n_lanes : int
        Number of annotated lanes.
    curvature_family : str
        One of ``straight``, ``arc``, ``cubic``, ``s-curve``.
    curvature_range : tuple
        Bounds of the curvature magnitude, in 1/pixels.
    lane_spacing : float
        Lateral distance between neighbouring lanes at the bottom row.
    seed : int
    priors_per_lane, background_priors : int
        Size of the prior population.
    n_channels, n_samples : int
        Anchor feature layout ``(C_in, S)``.
    """
    n_lanes: int = 4
    curvature_family: str = "arc"
    curvature_range: tuple = (0.0, 1e-3)
    lane_spacing: float = 160.0
    seed: int = 42
    priors_per_lane: int = 6
    background_priors: int = 8
    n_channels: int = 64
    n_samples: int = 36

    def __post_init__(self):
        object.__setattr__(self, "curvature_range", tuple(float(c) for c in self.curvature_range))
        if self.n_lanes < 0:
            raise ValueError("n_lanes must be >= 0, got {0}".format(self.n_lanes))
        if self.curvature_family not in CURVATURE_FAMILIES:
            raise ValueError("unknown curvature family '{0}', choose from {1}".format(
                self.curvature_family, CURVATURE_FAMILIES))
        lo, hi = self.curvature_range
        if not 0 <= lo <= hi:
            raise ValueError("curvature_range must satisfy 0 <= low <= high, got {0}".format(self.curvature_range))
        if self.priors_per_lane < 0 or self.background_priors < 0:
            raise ValueError("prior counts must be >= 0")
        if self.n_channels < 1 or self.n_samples < 2:
            raise ValueError("need n_channels >= 1 and n_samples >= 2")


@dataclass(frozen=True)
class NoiseModel:
    """
    Noise of the synthetic detector.

    Parameters
    ----------
    sigma_geo : float
        Lateral jitter of spawned priors in pixels.
    sigma_p : float
        Logit noise of the classification confidence.
    sigma_q : float
        Logit noise of the fidelity estimate.
    rho : float
        Share of the confidence logit driven by a uniform nuisance instead of
        geometry; 0 makes the confidence a function of the true overlap.
    confidence_gain, confidence_center : float
        Confidence is ``sigmoid(gain * (mix - center) + noise)``.
    feature_noise, feature_scale : float
        Features are ``projection * residual / feature_scale + feature_noise * z``.
    projection_seed : int
        Seed of the fixed channel projections, shared by every scene.
    """
    sigma_geo: float = 10.0
    sigma_p: float = 1.0
    sigma_q: float = 0.5
    rho: float = 0.6
    confidence_gain: float = 4.0
    confidence_center: float = 0.5
    feature_noise: float = 0.1
    feature_scale: float = 15.0
    projection_seed: int = 0

    def __post_init__(self):
        for name in ("sigma_geo", "sigma_p", "sigma_q", "feature_noise"):
            if not getattr(self, name) >= 0:
                raise ValueError("{0} must be >= 0, got {1}".format(name, getattr(self, name)))
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1], got {0}".format(self.rho))
        if not self.feature_scale > 0:
            raise ValueError("feature_scale must be > 0")


@dataclass(eq=False)
class Scene:
    """
    Attributes
    ----------
    gts : list of Lane
    priors : list of LanePrior
    q_true : np.ndarray
        Unsigned overlap of every prior with its source lane (best lane for
        background priors).
    source : np.ndarray
        Index of the lane a prior was spawned from, -1 for background priors.
    residual : np.ndarray
        ``(J, N)`` lateral error ``gt - prior`` on the prior's valid rows.
    features : np.ndarray
        ``(J, C_in, S)`` anchor features.
    """
    gts: list
    priors: list
    q_true: np.ndarray
    source: np.ndarray
    residual: np.ndarray
    features: np.ndarray
    index: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def cls_confidence(self):
        return np.array([p.cls_confidence for p in self.priors])

    @property
    def fidelity(self):
        return np.array([p.fidelity for p in self.priors])

    @property
    def xs(self):
        return np.array([p.xs for p in self.priors]).reshape(len(self.priors), self.residual.shape[1])

    @property
    def masks(self):
        return np.array([p.valid_mask for p in self.priors], dtype=bool).reshape(len(self.priors), self.residual.shape[1])

# =============================================================================
# %% Building blocks
# =============================================================================

def feature_projection(n_channels, seed=0):
    """Fixed channel projection vector shared by all scenes with the same seed."""
    return np.random.default_rng(seed).standard_normal(n_channels)


def encode_features(residual, projection, n_samples, noise=NoiseModel(), rng=None):
    """
    Anchor features of priors with the given residual.

    Parameters
    ----------
    residual : np.ndarray
        ``(N,)`` or ``(B, N)`` lateral error in pixels on the grid rows.
    projection : np.ndarray
        ``(C,)`` channel projection.
    n_samples : int
        Number of sample points ``S`` along the prior.
    rng : np.random.Generator, optional
        Source of the feature noise; no noise when omitted.

    Returns
    -------
    features : np.ndarray
        ``(C, S)`` or ``(B, C, S)``.
    """
    sampled = resample_linear(residual, n_samples) / noise.feature_scale
    features = projection[:, None] * sampled[..., None, :]
    if rng is not None and noise.feature_noise > 0:
        features = features + noise.feature_noise * rng.standard_normal(features.shape)
    return features


def scene_rng(seed, index):
    """Generator of scene ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _lane_shape(rows, height, family, curvature, phase):
    """Lateral displacement of a curved lane relative to its straight chord."""
    depth = height - rows
    if family == "straight":
        return np.zeros_like(rows)
    if family == "arc":
        return 0.5 * curvature * depth ** 2
    if family == "cubic":
        return curvature * depth ** 3 / height
    # s-curve
    return 0.25 * curvature * height ** 2 * np.sin(2 * np.pi * depth / height + phase) / (2 * np.pi)


def _draw_gts(spec, grid, rng):
    height, width = grid.image_height, grid.image_width
    n = grid.n_points
    sign = rng.choice([-1.0, 1.0])
    curvature = sign * rng.uniform(*spec.curvature_range)
    phase = rng.uniform(0, 2 * np.pi)
    bend = _lane_shape(grid.rows, height, spec.curvature_family, curvature, phase)
    centre = width / 2 + rng.normal(0, 0.05 * width)

    gts = []
    for k in range(spec.n_lanes):
        base = centre + (k - (spec.n_lanes - 1) / 2) * spec.lane_spacing
        top = base - 0.6 * (base - width / 2)
        xs = base + (top - base) * (height - grid.rows) / height + bend
        start = int(rng.integers(0, max(1, int(0.3 * n))))
        xs = np.clip(xs, -width + 1, 2 * width - 1)
        gts.append(make_lane(xs, grid, start, n - start))
    return gts


def _jitter(rows, height, sigma, rng):
    depth = (height - rows) / height
    offset, tilt, sway = rng.normal(0, sigma, 3)
    return offset + tilt * depth + 0.5 * sway * depth ** 2


def _confidence(q_true, noise, rng):
    u = rng.uniform(size=q_true.shape)
    z = rng.standard_normal(q_true.shape)
    mix = (1 - noise.rho) * q_true + noise.rho * u
    return expit(noise.confidence_gain * (mix - noise.confidence_center) + noise.sigma_p * z)


def _fidelity(q_true, noise, rng):
    z = rng.standard_normal(q_true.shape)
    return expit(logit(np.clip(q_true, 1e-2, 1 - 1e-2)) + noise.sigma_q * z)

# =============================================================================
# %% Scenes
# =============================================================================

def generate_scene(spec, grid, noise=NoiseModel(), width=WidthModel(), index=0):
    """
    Generate one synthetic scene.

    Parameters
    ----------
    spec : SceneSpec
    grid : SampleGrid
    noise : NoiseModel
    width : WidthModel
        Width used for the true overlaps; lanes must be further apart than
        twice its half-width.
    index : int
        Scene index mixed into the seed.

    Returns
    -------
    scene : Scene

    Example use
    -----------
    grid = build_grid(320, 800, 72)
    scene = generate_scene(SceneSpec(seed=7), grid)
    """
    if spec.n_lanes > 1 and not spec.lane_spacing > 2 * width.base_half_width:
        raise ValueError("lane_spacing {0} must exceed twice the half-width {1}".format(
            spec.lane_spacing, width.base_half_width))
    rng = scene_rng(spec.seed, index)
    height, img_width, n = grid.image_height, grid.image_width, grid.n_points
    gts = _draw_gts(spec, grid, rng)

    xs, starts, lengths, source = [], [], [], []
    for k, gt in enumerate(gts):
        for _ in range(spec.priors_per_lane):
            xs.append(gt.xs + _jitter(grid.rows, height, noise.sigma_geo, rng))
            starts.append(gt.start_index)
            lengths.append(gt.valid_length)
            source.append(k)
    for _ in range(spec.background_priors):
        base = rng.uniform(0, img_width)
        top = base + rng.normal(0, 0.2 * img_width)
        xs.append(base + (top - base) * (height - grid.rows) / height)
        starts.append(0)
        lengths.append(n)
        source.append(-1)
    source = np.array(source, dtype=int)
    J = len(xs)
    xs = np.array(xs).reshape(J, n)
    masks = [np.zeros(n, dtype=bool) for _ in range(J)]
    for j in range(J):
        masks[j][starts[j]:starts[j] + lengths[j]] = True

    q_true = np.zeros(J)
    residual = np.zeros((J, n))
    if gts and J:
        ious = iou_matrix(list(zip(xs, masks)), gts, width, grid=grid)
        for j in range(J):
            if source[j] >= 0:
                q_true[j] = lane_iou((xs[j], masks[j]), gts[source[j]], width, grid=grid)
                residual[j] = np.where(masks[j], gts[source[j]].xs - xs[j], 0.0)
            else:
                q_true[j] = ious[j].max()

    p_hat = _confidence(q_true, noise, rng)
    q_hat = _fidelity(q_true, noise, rng)
    projection = feature_projection(spec.n_channels, noise.projection_seed)
    features = encode_features(residual, projection, spec.n_samples, noise, rng) if J else \
        np.zeros((0, spec.n_channels, spec.n_samples))

    priors = [prior_from_xs(xs[j], starts[j], lengths[j], grid, p_hat[j], q_hat[j]) for j in range(J)]
    logger.debug("scene %d: %d lanes, %d priors", index, len(gts), J)
    return Scene(gts, priors, q_true, source, residual, features, index=index, seed=spec.seed,
                 meta={"noise": noise})


def iter_scenes(spec, grid, noise=NoiseModel(), n_scenes=1, width=WidthModel(), start=0):
    """Yield scenes ``start, ..., start + n_scenes - 1`` of a spec."""
    for index in range(start, start + n_scenes):
        yield generate_scene(spec, grid, noise, width, index)


def calibration_population(spec, grid, noise=NoiseModel(), n_candidates=5000, width=WidthModel()):
    """
    Confidence, fidelity estimate and true overlap of the first ``n_candidates``
    priors drawn from consecutive scenes.

    Returns
    -------
    p_hat, q_hat, q_true : np.ndarray
    """
    if spec.priors_per_lane * spec.n_lanes + spec.background_priors == 0:
        raise ShapeError("scene spec produces no priors")
    p, q, t = [], [], []
    count, index = 0, 0
    while count < n_candidates:
        scene = generate_scene(spec, grid, noise, width, index)
        p.append(scene.cls_confidence)
        q.append(scene.fidelity)
        t.append(scene.q_true)
        count += len(scene.priors)
        index += 1
    return tuple(np.concatenate(a)[:n_candidates] for a in (p, q, t))


def scripted_offsets(scene, grid, n_samples=None):
    """
    Gated offsets a perfectly trained refinement block would produce: the
    feature readout along the known projection, resampled back to the grid.
    """
    n_samples = n_samples or scene.features.shape[-1]
    if len(scene.priors) == 0:
        return np.zeros((0, grid.n_points))
    noise = scene.meta.get("noise", NoiseModel())
    projection = feature_projection(scene.features.shape[1], noise.projection_seed)
    readout = np.tensordot(scene.features, projection, axes=([1], [0])) / np.dot(projection, projection)
    return resample_linear(readout * noise.feature_scale, grid.n_points) * scene.masks
