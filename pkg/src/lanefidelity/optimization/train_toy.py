"""
Gradient-descent fitting of the refinement block (and a linear fidelity head)
on synthetic scenes, and the 2x2 ablation of score fusion and gated offsets.

Per stage the objective is the weighted sum of

* ``reg``: Smooth-L1 between refined and matched lane coordinates (pixels),
* ``iou``: ``1 - signed LaneIoU`` of every positive against its lane,
* ``cls``: BCE of the (synthetic, fixed) confidences against the labels,
* ``fid``: fidelity loss of the head output against the soft labels,
* ``seg``: zero, there is no segmentation branch,

and the losses of all active stages are averaged.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import xarray as xr
from scipy import stats
from scipy.special import expit

from ..evaluation.metrics import EvalConfig, f1_report
from ..exceptions import ShapeError, TrainingError
from ..models.calibrate import CriConfig
from ..models.geometry import decode_polyline
from ..models.overlap import WidthModel, iou_matrix, lane_iou
from ..models.postprocess import PostprocessConfig, run_pipeline
from ..models.refine import (AglrConfig, ModulationConfig, aglr_backward, init_params, named_tensors,
                             params_from_tensors, pool_features, refine_stages)
from ..data.synthetic import NoiseModel, encode_features, feature_projection, scripted_offsets
from .assign import AssignConfig, cost_matrix, dynamic_assign
from .losses import (LOSS_TERMS, LossWeights, bce, fidelity_loss_grad, iou_loss_grad, smooth_l1_grad, stage_average,
                     total_loss)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Parameters
    ----------
    step_size : float
        Learning rate applied to the momentum-averaged gradient.
    momentum : float
        ``v <- momentum * v + (1 - momentum) * grad``.
    iterations : int
    batch_scenes : int
        Scenes per gradient step, cycled in order.
    n_scenes : int
        Size of the training set.
    seed : int
    loss_weights : LossWeights
    fidelity_objective : {"bce", "smooth_l1"}
    train_fidelity_head : bool
    clip_norm : float
        Global gradient norm is clipped to this value; 0 disables clipping.
    """
    step_size: float = 0.1
    momentum: float = 0.9
    iterations: int = 1000
    batch_scenes: int = 4
    n_scenes: int = 50
    seed: int = 42
    loss_weights: LossWeights = field(default_factory=LossWeights)
    fidelity_objective: str = "bce"
    train_fidelity_head: bool = True
    clip_norm: float = 5.0

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ValueError("step_size must be >= 0, got {0}".format(self.step_size))
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1), got {0}".format(self.momentum))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1, got {0}".format(self.iterations))
        if self.batch_scenes < 1 or self.n_scenes < 1:
            raise ValueError("batch_scenes and n_scenes must be >= 1")
        if self.fidelity_objective not in ("bce", "smooth_l1"):
            raise ValueError("fidelity_objective must be 'bce' or 'smooth_l1'")


@dataclass(frozen=True)
class ToySetup:
    """Everything a training step needs besides parameters and data."""
    grid: object
    aglr: AglrConfig
    width: WidthModel = WidthModel()
    assign: AssignConfig = AssignConfig()
    noise: NoiseModel = NoiseModel()


@dataclass
class ToyModel:
    """Per-stage refinement parameters and linear fidelity heads ``(weights, bias)``."""
    stages: list
    heads: list

    def params_for(self, stage):
        return self.stages[stage] if len(self.stages) > 1 else self.stages[0]

    def head_for(self, stage):
        return self.heads[stage] if len(self.heads) > 1 else self.heads[0]

    def tensors(self):
        return named_tensors(self.stages, self.heads)

    @classmethod
    def from_tensors(cls, tensors):
        stages, heads = params_from_tensors(tensors)
        return cls(stages, heads)


def init_model(setup, seed=42):
    """Fresh model: one parameter set per stage unless stages share parameters."""
    rng = np.random.default_rng(seed)
    n = 1 if setup.aglr.shared_across_stages else 3
    stages = [init_params(rng, setup.aglr.c_in, setup.aglr.c_hidden, setup.aglr.gate_bias) for _ in range(n)]
    heads = [(np.zeros(setup.aglr.c_in + 1), 0.0) for _ in range(n)]
    return ToyModel(stages, heads)

# =============================================================================
# %% Forward and gradients of one scene
# =============================================================================

def _residual(scene, xs):
    gt_xs = np.zeros_like(xs)
    for j, k in enumerate(scene.source):
        if k >= 0:
            gt_xs[j] = scene.gts[k].xs
    return np.where((scene.source[:, None] >= 0) & scene.masks, gt_xs - xs, 0.0)


def stage_features(scene, xs, stage, setup, rng):
    """Anchor features of the priors at their current coordinates."""
    if stage == setup.aglr.active_stages[0]:
        return scene.features
    projection = feature_projection(scene.features.shape[1], setup.noise.projection_seed)
    return encode_features(_residual(scene, xs), projection, scene.features.shape[-1], setup.noise, rng)


def _stage_objective(scene, xs, feats, head, setup, weights, objective):
    """Loss terms of one stage and their gradients w.r.t. ``xs`` and the head."""
    grid, width = setup.grid, setup.width
    J = len(scene.priors)
    masks = scene.masks
    lanes = list(zip(xs, masks))
    p_hat = scene.cls_confidence
    grad_xs = np.zeros_like(xs)
    terms = dict.fromkeys(LOSS_TERMS, 0.0)

    if scene.gts:
        ious = iou_matrix(lanes, scene.gts, width, grid=grid)
        result = dynamic_assign(cost_matrix(ious, p_hat, setup.assign), ious, setup.assign)
    else:
        ious = np.zeros((J, 0))
        result = dynamic_assign(np.zeros((J, 0)), ious, setup.assign)
    positives = result.positives

    if len(positives):
        preds, targets, owners = [], [], []
        for j in positives:
            gt = scene.gts[result.matched_gt[int(j)]]
            rows = np.flatnonzero(masks[j] & gt.valid_mask)
            preds.append(xs[j, rows])
            targets.append(gt.xs[rows])
            owners.append((j, rows))
        preds = np.concatenate(preds)
        if preds.size:
            value, grad = smooth_l1_grad(preds, np.concatenate(targets))
            terms["reg"] = value
            offset = 0
            for j, rows in owners:
                grad_xs[j, rows] += weights.w_reg * grad[offset:offset + len(rows)]
                offset += len(rows)

        for j in positives:
            value, grad = iou_loss_grad(lanes[j], scene.gts[result.matched_gt[int(j)]], width, grid)
            terms["iou"] += value / len(positives)
            grad_xs[j] += weights.w_iou * grad / len(positives)

    terms["cls"] = float(np.mean(bce(p_hat, result.labels)))

    w, b = head
    pooled = pool_features(feats)
    q_hat = expit(pooled @ w + b)
    value, dq = fidelity_loss_grad(q_hat, result.soft_labels, positives, result.negatives, objective)
    terms["fid"] = value
    dz = weights.w_fid * dq * q_hat * (1.0 - q_hat)
    head_grad = (pooled.T @ dz, float(dz.sum()))
    return terms, grad_xs, head_grad


def scene_loss_and_grads(model, scene, setup, cfg, rng):
    """
    Stage-averaged total loss of one scene and its gradients.

    Returns
    -------
    loss : float
    terms : dict
        Stage-averaged unweighted terms.
    grads : dict
        Gradient per tensor name, same keys as :meth:`ToyModel.tensors`.
    """
    stages = setup.aglr.active_stages
    weights = cfg.loss_weights
    feats = {}

    def feature_fn(stage, xs):
        feats[stage] = stage_features(scene, xs, stage, setup, rng)
        return feats[stage]

    _, outputs = refine_stages(scene.xs, feature_fn, model.stages, setup.grid.n_points, stages)
    xs = scene.xs
    xs_grads, head_grads, stage_terms = [], [], []
    for stage in stages:
        xs = xs + outputs[stage].resampled
        terms, grad_xs, head_grad = _stage_objective(scene, xs, feats[stage], model.head_for(stage), setup,
                                                     weights, cfg.fidelity_objective)
        xs_grads.append(grad_xs)
        head_grads.append(head_grad)
        stage_terms.append(terms)

    n = len(stages)
    grads = {k: np.zeros_like(v) for k, v in model.tensors().items()}
    carry = np.zeros_like(xs)
    for i in reversed(range(n)):
        carry = carry + xs_grads[i] / n
        back = aglr_backward(outputs[stages[i]], carry).params
        slot = stages[i] if len(model.stages) > 1 else 0
        for name, value in back.as_dict().items():
            grads["stage{0}.{1}".format(slot, name)] += value
        if cfg.train_fidelity_head:
            hslot = stages[i] if len(model.heads) > 1 else 0
            grads["fidelity{0}.w".format(hslot)] += head_grads[i][0] / n
            grads["fidelity{0}.b".format(hslot)] += head_grads[i][1] / n

    terms = {t: stage_average(st[t] for st in stage_terms) for t in LOSS_TERMS}
    try:
        loss = total_loss(terms, weights)
    except ValueError as err:
        raise TrainingError("scene {0}: {1}".format(scene.index, err)) from err
    return loss, terms, grads

# =============================================================================
# %% Updates
# =============================================================================

def apply_update(tensors, grads, velocity, step_size, momentum, clip_norm=0.0):
    """
    Momentum-averaged gradient step.

    Returns
    -------
    tensors, velocity : dict
        Updated copies.
    """
    if clip_norm > 0:
        norm = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values()))
        if norm > clip_norm:
            grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
    velocity = {k: momentum * velocity.get(k, 0.0) + (1.0 - momentum) * grads[k] for k in tensors}
    tensors = {k: tensors[k] - step_size * velocity[k] for k in tensors}
    return tensors, velocity


@dataclass
class StepResult:
    model: ToyModel
    loss: float
    terms: dict
    velocity: dict


def train_step(model, batch, setup, cfg, velocity=None, iteration=0):
    """
    One gradient step over a batch of scenes.

    The reported loss is the batch mean before the update. A step size of 0
    leaves the parameters untouched.
    """
    losses, term_list, grad_list = [], [], []
    for scene in batch:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, iteration, scene.index]))
        loss, terms, grads = scene_loss_and_grads(model, scene, setup, cfg, rng)
        losses.append(loss)
        term_list.append(terms)
        grad_list.append(grads)
    loss = float(np.mean(losses))
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss {0} at iteration {1} (terms: {2})".format(loss, iteration, term_list))
    grads = {k: np.mean([g[k] for g in grad_list], axis=0) for k in grad_list[0]}
    tensors, velocity = apply_update(model.tensors(), grads, velocity or {}, cfg.step_size, cfg.momentum,
                                     cfg.clip_norm)
    new_model = ToyModel.from_tensors(tensors)
    terms = {t: float(np.mean([tl[t] for tl in term_list])) for t in LOSS_TERMS}
    return StepResult(new_model, loss, terms, velocity)

# =============================================================================
# %% Evaluation helpers
# =============================================================================

def refine_scene(model, scene, setup, rng=None):
    """Coordinates of every prior after all active stages, without modulation."""
    rng = rng if rng is not None else np.random.default_rng(np.random.SeedSequence([scene.seed, scene.index, 7]))
    xs, _ = refine_stages(scene.xs, lambda stage, xs: stage_features(scene, xs, stage, setup, rng), model.stages,
                          setup.grid.n_points, setup.aglr.active_stages)
    return xs


def refinement_error(model, scenes, setup):
    """Mean ``1 - unsigned LaneIoU`` of spawned priors against their source lane."""
    errors = []
    for scene in scenes:
        xs = refine_scene(model, scene, setup) if model is not None else scene.xs
        masks = scene.masks
        for j, k in enumerate(scene.source):
            if k >= 0:
                errors.append(1.0 - lane_iou((xs[j], masks[j]), scene.gts[k], setup.width, grid=setup.grid))
    if not errors:
        raise ShapeError("no spawned priors to measure")
    return float(np.mean(errors))


@dataclass
class TrainResult:
    model: ToyModel
    history: xr.Dataset
    error_initial: float
    error_final: float


def train(scenes, setup, cfg, model=None, log=None):
    """
    Fit the refinement block on a list of scenes.

    Parameters
    ----------
    scenes : list of Scene
    setup : ToySetup
    cfg : TrainConfig
    model : ToyModel, optional
        Starting point; initialised from ``cfg.seed`` when omitted.
    log : TrainingLog, optional
        Receives one record per iteration.

    Returns
    -------
    result : TrainResult
        Trained model, the loss history as an ``xarray.Dataset`` over
        ``iteration`` and the mean refinement error before and after.

    Example use
    -----------
    scenes = list(iter_scenes(SceneSpec(n_channels=16), grid, n_scenes=50))
    setup = ToySetup(grid, AglrConfig(c_in=16, c_hidden=16, active_stages=(0,)))
    result = train(scenes, setup, TrainConfig())
    """
    if not scenes:
        raise ShapeError("no training scenes")
    c_in = scenes[0].features.shape[1]
    if c_in != setup.aglr.c_in:
        raise ShapeError("scenes carry {0} feature channels, the refinement block expects {1}".format(
            c_in, setup.aglr.c_in))
    model = model or init_model(setup, cfg.seed)
    error_initial = refinement_error(model, scenes, setup)

    history = np.zeros((cfg.iterations, 1 + len(LOSS_TERMS)))
    velocity = {}
    for it in range(cfg.iterations):
        start = (it * cfg.batch_scenes) % len(scenes)
        batch = [scenes[(start + b) % len(scenes)] for b in range(min(cfg.batch_scenes, len(scenes)))]
        step = train_step(model, batch, setup, cfg, velocity, it)
        model, velocity = step.model, step.velocity
        history[it] = [step.loss] + [step.terms[t] for t in LOSS_TERMS]
        if log is not None:
            log.write(it, step.loss, step.terms)
        if it % 100 == 0:
            logger.info("iteration %d: loss %.5f", it, step.loss)

    error_final = refinement_error(model, scenes, setup)
    logger.info("mean refinement error %.4f -> %.4f", error_initial, error_final)
    data = {"loss": ("iteration", history[:, 0])}
    data.update({t: ("iteration", history[:, i + 1]) for i, t in enumerate(LOSS_TERMS)})
    ds = xr.Dataset(data, coords={"iteration": np.arange(cfg.iterations)},
                    attrs={"error_initial": error_initial, "error_final": error_final})
    return TrainResult(model, ds, error_initial, error_final)

# =============================================================================
# %% Ablation
# =============================================================================

COMBINATIONS = (
    ("cls_only", False),
    ("cls_only", True),
    ("cri", False),
    ("cri", True),
)


def combination_name(score_mode, offsets):
    return score_mode + ("+offsets" if offsets else "")


def model_offsets(model, setup):
    """Offset source driven by a trained model: total refinement over all active stages."""
    def offsets(scene, grid):
        return (refine_scene(model, scene, setup) - scene.xs) * scene.masks
    return offsets


@dataclass
class AblationResult:
    reports: dict
    ttests: dict

    def table(self, threshold=0.5):
        rows = []
        for name, report in self.reports.items():
            m = report.metrics(threshold)
            rows.append(dict(combination=name, precision=m["precision"], recall=m["recall"], f1=m["f1"],
                             p_value=self.ttests.get(name, float("nan"))))
        return pd.DataFrame(rows).set_index("combination")


def ablation_run(scenes, grid, width=WidthModel(), postprocess=PostprocessConfig(), cri_config=CriConfig(),
                 modulation=ModulationConfig(), eval_config=EvalConfig(), offset_source=None):
    """
    Run the pipeline under the four combinations of score fusion (on/off) and
    gated offsets (on/off).

    Parameters
    ----------
    scenes : list of Scene
        Held-out evaluation scenes.
    offset_source : callable, optional
        ``offset_source(scene, grid)`` returning ``(J, N)`` gated offsets;
        :func:`~lanefidelity.data.synthetic.scripted_offsets` when omitted.

    Returns
    -------
    result : AblationResult
        Evaluation report per combination and the p-value of a paired t-test
        of per-frame F1 at 0.5 against the baseline (``cls_only`` without
        offsets).
    """
    offset_source = offset_source or scripted_offsets
    gts = [[decode_polyline(g, grid) for g in scene.gts] for scene in scenes]
    offsets = [offset_source(scene, grid) for scene in scenes]

    reports = {}
    for mode, use_offsets in COMBINATIONS:
        cfg = replace(postprocess, score_mode=mode)
        preds = []
        for scene, off in zip(scenes, offsets):
            dets = run_pipeline(scene.priors, grid, width, cfg, cri_config, modulation,
                                offsets=off if use_offsets else None)
            preds.append([d.points for d in dets])
        reports[combination_name(mode, use_offsets)] = f1_report(preds, gts, eval_config)

    baseline = reports[combination_name("cls_only", False)].per_frame_f1[eval_config.iou_thresholds[0]]
    ttests = {}
    for name, report in reports.items():
        other = report.per_frame_f1[eval_config.iou_thresholds[0]]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ttests[name] = float(stats.ttest_rel(other, baseline).pvalue) if len(other) > 1 else float("nan")
    for name, report in reports.items():
        logger.info("%s: F1@%.2f = %.4f", name, eval_config.iou_thresholds[0], report.f1(eval_config.iou_thresholds[0]))
    return AblationResult(reports, ttests)
