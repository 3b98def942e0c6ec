"""
Gated local refinement of lane priors.

A small residual 1D-convolution block reads the anchor features sampled along
a prior (``C_in`` channels at ``S`` points) and predicts a lateral offset and
a sigmoid gate per sample point. The gated offsets are resampled to the ``N``
grid rows and added to the prior. Forward and backward passes are written out
by hand in numpy and operate on a batch axis, so a whole scene's priors go
through in one call.

Weight layout
-------------
3-tap convolutions store weights as ``(C_in, C_out, 3)``; tap ``t`` reads the
input at position ``s + t - 1`` with zero padding. The residual 1x1 projection
stores ``(C_in, C_h)``.
"""

import json
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..exceptions import DataError, ShapeError
from .geometry import resampling_matrix

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "res_w", "res_b",
               "offset_w", "offset_b", "gate_w", "gate_b")

# =============================================================================
# %% Configuration and parameter containers
# =============================================================================

@dataclass(frozen=True)
class AglrConfig:
    """Sizes of the refinement block and the stages it runs at."""
    c_in: int = 64
    c_hidden: int = 64
    n_samples: int = 36
    n_points: int = 72
    gate_bias: float = -2.0
    shared_across_stages: bool = False
    active_stages: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.c_in < 1 or self.c_hidden < 1:
            raise ValueError("channel counts must be >= 1")
        if self.n_samples < 2 or self.n_points < 2:
            raise ValueError("n_samples and n_points must be >= 2")
        object.__setattr__(self, "active_stages", tuple(sorted(set(self.active_stages))))
        if not set(self.active_stages) <= {0, 1, 2}:
            raise ValueError("active_stages must be a subset of (0, 1, 2), got {0}".format(self.active_stages))


@dataclass(frozen=True)
class ModulationConfig:
    """Focal exponent of the inference-time modulation ``(1 - q)**gamma``."""
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0, got {0}".format(self.gamma))


@dataclass
class AglrParams:
    """Weights and biases of one refinement block (see module docstring for layout)."""
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    res_w: np.ndarray
    res_b: np.ndarray
    offset_w: np.ndarray
    offset_b: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        c_in, c_h, _ = self.conv1_w.shape
        expected = {
            "conv1_w": (c_in, c_h, 3), "conv1_b": (c_h,),
            "conv2_w": (c_h, c_h, 3), "conv2_b": (c_h,),
            "res_w": (c_in, c_h), "res_b": (c_h,),
            "offset_w": (c_h, 1, 3), "offset_b": (1,),
            "gate_w": (c_h, 1, 3), "gate_b": (1,),
        }
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ShapeError("{0} has shape {1}, expected {2}".format(name, value.shape, shape))
            if not np.all(np.isfinite(value)):
                raise ValueError("{0} contains non-finite values".format(name))

    @property
    def c_in(self):
        return self.conv1_w.shape[0]

    @property
    def c_hidden(self):
        return self.conv1_w.shape[1]

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return AglrParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def zeros_like(self):
        return AglrParams(**{k: np.zeros_like(v) for k, v in self.as_dict().items()})


def init_params(rng, c_in, c_hidden, gate_bias=-2.0, offset_scale=0.1):
    """
    Random initial parameters for one refinement block.

    Convolution weights are drawn with a ``1/sqrt(fan_in)`` scale; the
    offset head is scaled down further by ``offset_scale``. The gate head
    bias starts at ``gate_bias`` (gates ~0.12 for -2) so a fresh block
    barely moves the prior.
    """
    def he(shape, fan_in):
        return rng.standard_normal(shape) / np.sqrt(fan_in)

    return AglrParams(
        conv1_w=he((c_in, c_hidden, 3), 3 * c_in), conv1_b=np.zeros(c_hidden),
        conv2_w=he((c_hidden, c_hidden, 3), 3 * c_hidden), conv2_b=np.zeros(c_hidden),
        res_w=he((c_in, c_hidden), c_in), res_b=np.zeros(c_hidden),
        offset_w=offset_scale * he((c_hidden, 1, 3), 3 * c_hidden), offset_b=np.zeros(1),
        gate_w=he((c_hidden, 1, 3), 3 * c_hidden), gate_b=np.full(1, float(gate_bias)),
    )


def zero_params(c_in, c_hidden):
    return AglrParams(
        conv1_w=np.zeros((c_in, c_hidden, 3)), conv1_b=np.zeros(c_hidden),
        conv2_w=np.zeros((c_hidden, c_hidden, 3)), conv2_b=np.zeros(c_hidden),
        res_w=np.zeros((c_in, c_hidden)), res_b=np.zeros(c_hidden),
        offset_w=np.zeros((c_hidden, 1, 3)), offset_b=np.zeros(1),
        gate_w=np.zeros((c_hidden, 1, 3)), gate_b=np.zeros(1),
    )

# =============================================================================
# %% Convolution primitives
# =============================================================================

def conv1d(x, w, b):
    """
    3-tap, zero-padded 1D convolution of a batch.

    Parameters
    ----------
    x : np.ndarray
        Input of shape ``(B, C_in, S)``.
    w : np.ndarray
        Weights of shape ``(C_in, C_out, 3)``.
    b : np.ndarray
        Bias of shape ``(C_out,)``.

    Returns
    -------
    y : np.ndarray
        Output of shape ``(B, C_out, S)``.
    cols : np.ndarray
        Unfolded input ``(B, S, C_in * 3)`` kept for the backward pass.
    """
    B, C_in, S = x.shape
    xpad = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    cols = sliding_window_view(xpad, 3, axis=2).transpose(0, 2, 1, 3).reshape(B, S, C_in * 3)
    wmat = w.transpose(0, 2, 1).reshape(C_in * 3, -1)
    y = cols @ wmat
    return y.transpose(0, 2, 1) + b[None, :, None], cols


def conv1d_backward(dy, cols, w):
    """Gradients of :func:`conv1d` with respect to its input, weights and bias."""
    B, C_out, S = dy.shape
    C_in = w.shape[0]
    dyt = dy.transpose(0, 2, 1)
    wmat = w.transpose(0, 2, 1).reshape(C_in * 3, C_out)
    dw = np.tensordot(cols, dyt, axes=([0, 1], [0, 1])).reshape(C_in, 3, C_out).transpose(0, 2, 1)
    db = dy.sum(axis=(0, 2))
    dcols = (dyt @ wmat.T).reshape(B, S, C_in, 3)
    dxpad = np.zeros((B, C_in, S + 2))
    for t in range(3):
        dxpad[:, :, t:t + S] += dcols[:, :, :, t].transpose(0, 2, 1)
    return dxpad[:, :, 1:-1], dw, db

# =============================================================================
# %% Forward and backward
# =============================================================================

@dataclass
class AglrOutput:
    """
    Result of :func:`aglr_forward`.

    Arrays are ``(S,)`` / ``(N,)`` for a single feature map and carry a
    leading batch axis when the input had one.
    """
    offsets: np.ndarray
    gates: np.ndarray
    gated: np.ndarray
    resampled: np.ndarray
    cache: dict = None


@dataclass
class AglrGradients:
    params: AglrParams
    feature: np.ndarray


def aglr_forward(feature, params, n_points):
    """
    Run the refinement block on anchor features.

    Parameters
    ----------
    feature : np.ndarray
        ``(C_in, S)`` feature map, or ``(B, C_in, S)`` for a batch of priors.
    params : AglrParams
    n_points : int
        Number of grid rows ``N`` the gated offsets are resampled to.

    Returns
    -------
    output : AglrOutput
        Offsets ``r``, gates ``g``, gated offsets ``g * r`` and their
        resampling to ``N`` rows, plus the activations needed by
        :func:`aglr_backward`.

    Example use
    -----------
    params = init_params(np.random.default_rng(42), 64, 64)
    out = aglr_forward(feature, params, 72)
    refined = apply_point_update(prior, np.zeros(72), out.resampled)
    """
    f = np.asarray(feature, dtype=np.float64)
    single = f.ndim == 2
    if single:
        f = f[None]
    if f.ndim != 3:
        raise ShapeError("feature must be (C_in, S) or (B, C_in, S), got shape {0}".format(np.shape(feature)))
    if f.shape[1] != params.c_in:
        raise ShapeError("feature has {0} channels, params expect {1}".format(f.shape[1], params.c_in))
    if f.shape[2] < 2:
        raise ShapeError("need at least 2 sample points, got {0}".format(f.shape[2]))
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite feature values")

    z1, cols1 = conv1d(f, params.conv1_w, params.conv1_b)
    a1 = np.maximum(z1, 0.0)
    z2, cols2 = conv1d(a1, params.conv2_w, params.conv2_b)
    h = z2 + np.einsum("bis,io->bos", f, params.res_w) + params.res_b[None, :, None]
    r, colsh = conv1d(h, params.offset_w, params.offset_b)
    gl, _ = conv1d(h, params.gate_w, params.gate_b)
    r, g = r[:, 0, :], expit(gl[:, 0, :])
    gated = g * r
    R = resampling_matrix(f.shape[2], int(n_points))
    resampled = gated @ R.T

    cache = dict(f=f, z1=z1, cols1=cols1, cols2=cols2, colsh=colsh, r=r, g=g,
                 params=params, n_points=int(n_points), single=single)
    if single:
        return AglrOutput(r[0], g[0], gated[0], resampled[0], cache)
    return AglrOutput(r, g, gated, resampled, cache)


def aglr_backward(output, grad_resampled):
    """
    Reverse-mode gradients of :func:`aglr_forward`.

    Parameters
    ----------
    output : AglrOutput
        Result of the forward pass, with its cache.
    grad_resampled : np.ndarray
        Gradient of the objective with respect to ``output.resampled``.

    Returns
    -------
    grads : AglrGradients
        Parameter gradients (summed over the batch) and the gradient with
        respect to the input feature map.
    """
    if not output.cache:
        raise ValueError("forward cache missing: run aglr_forward before aglr_backward")
    c = output.cache
    params, f, r, g = c["params"], c["f"], c["r"], c["g"]
    dres = np.asarray(grad_resampled, dtype=np.float64)
    if c["single"]:
        dres = dres[None]
    if dres.shape != (f.shape[0], c["n_points"]):
        raise ShapeError("grad_resampled has shape {0}, expected {1}".format(
            np.shape(grad_resampled), (f.shape[0], c["n_points"]) if not c["single"] else (c["n_points"],)))

    R = resampling_matrix(f.shape[2], c["n_points"])
    dgated = dres @ R
    dr = dgated * g
    dgl = dgated * r * g * (1.0 - g)

    dh_o, d_offset_w, d_offset_b = conv1d_backward(dr[:, None, :], c["colsh"], params.offset_w)
    dh_g, d_gate_w, d_gate_b = conv1d_backward(dgl[:, None, :], c["colsh"], params.gate_w)
    dh = dh_o + dh_g

    d_res_w = np.einsum("bis,bos->io", f, dh)
    d_res_b = dh.sum(axis=(0, 2))
    df_res = np.einsum("io,bos->bis", params.res_w, dh)

    da1, d_conv2_w, d_conv2_b = conv1d_backward(dh, c["cols2"], params.conv2_w)
    dz1 = da1 * (c["z1"] > 0)
    df_conv, d_conv1_w, d_conv1_b = conv1d_backward(dz1, c["cols1"], params.conv1_w)
    df = df_conv + df_res

    grads = AglrParams(conv1_w=d_conv1_w, conv1_b=d_conv1_b, conv2_w=d_conv2_w, conv2_b=d_conv2_b,
                       res_w=d_res_w, res_b=d_res_b, offset_w=d_offset_w, offset_b=d_offset_b,
                       gate_w=d_gate_w, gate_b=d_gate_b)
    return AglrGradients(grads, df[0] if c["single"] else df)


def modulate(offsets, q_hat, config=ModulationConfig()):
    """
    Scale gated offsets by ``(1 - q_hat)**gamma``; confident candidates move less.

    ``gamma = 0`` disables modulation, so the factor is 1 even at ``q_hat = 1``.
    """
    if not 0.0 <= q_hat <= 1.0:
        raise ValueError("q_hat must lie in [0, 1], got {0}".format(q_hat))
    factor = 1.0 if config.gamma == 0 else (1.0 - q_hat) ** config.gamma
    return factor * np.asarray(offsets, dtype=np.float64)


def refine_stages(xs, feature_fn, stage_params, n_points, active_stages=(0, 1, 2)):
    """
    Apply the refinement block at every active stage.

    Parameters
    ----------
    xs : np.ndarray
        ``(B, N)`` prior coordinates.
    feature_fn : callable
        ``feature_fn(stage, xs)`` returning the ``(B, C_in, S)`` features of
        the priors at their current coordinates.
    stage_params : sequence of AglrParams
        One entry per stage; a single-element sequence is shared by all stages.

    Returns
    -------
    xs : np.ndarray
        Refined coordinates.
    outputs : dict
        Forward output per active stage.
    """
    xs = np.asarray(xs, dtype=np.float64)
    outputs = {}
    for stage in sorted(active_stages):
        params = stage_params[stage] if len(stage_params) > 1 else stage_params[0]
        out = aglr_forward(feature_fn(stage, xs), params, n_points)
        xs = xs + out.resampled
        outputs[stage] = out
    return xs, outputs

# =============================================================================
# %% Toy fidelity head
# =============================================================================

def linear_head(feature, weights, bias, activation="sigmoid"):
    """Affine map of a feature vector (or a batch of rows) followed by sigmoid or identity."""
    z = np.asarray(feature, dtype=np.float64) @ np.asarray(weights, dtype=np.float64) + bias
    if activation == "sigmoid":
        return expit(z)
    if activation == "identity":
        return z
    raise ValueError("unknown activation '{0}'".format(activation))


def pool_features(feature):
    """Fixed pooling feeding the fidelity head: per-channel mean of squared features plus a mean magnitude."""
    f = np.asarray(feature, dtype=np.float64)
    return np.concatenate([np.mean(f ** 2, axis=-1), np.mean(np.abs(f), axis=(-2, -1))[..., None]], axis=-1)

# =============================================================================
# %% Named-tensor checkpoints
# =============================================================================

def dump_named_tensors(tensors):
    """Serialise ``{name: array}`` to the flat named-tensor JSON container."""
    entries = []
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "values": arr.ravel(order="C").tolist()})
    return json.dumps({"format": "named-tensors", "version": 1, "tensors": entries}, indent=1)


def parse_named_tensors(content):
    try:
        doc = json.loads(content)
        tensors = {}
        for entry in doc["tensors"]:
            tensors[entry["name"]] = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
    except (ValueError, KeyError, TypeError) as err:
        raise DataError("invalid named-tensor container: {0}".format(err)) from err
    return tensors


def named_tensors(stage_params, head=None):
    """
    Flat ``{name: array}`` view of per-stage refinement parameters and an
    optional fidelity head ``(weights, bias)`` per stage.
    """
    tensors = {}
    for s, params in enumerate(stage_params):
        for name, value in params.as_dict().items():
            tensors["stage{0}.{1}".format(s, name)] = value
    for s, (w, b) in enumerate(head or []):
        tensors["fidelity{0}.w".format(s)] = np.asarray(w, dtype=np.float64)
        tensors["fidelity{0}.b".format(s)] = np.atleast_1d(np.asarray(b, dtype=np.float64))
    return tensors


def params_from_tensors(tensors):
    """Inverse of :func:`named_tensors`; returns ``(stage_params, head)``."""
    stages = sorted({int(k.split(".")[0][5:]) for k in tensors if k.startswith("stage")})
    stage_params = []
    for s in stages:
        try:
            stage_params.append(AglrParams(**{n: tensors["stage{0}.{1}".format(s, n)] for n in PARAM_NAMES}))
        except KeyError as err:
            raise DataError("checkpoint is missing tensor {0}".format(err)) from err
    heads = sorted({int(k.split(".")[0][8:]) for k in tensors if k.startswith("fidelity")})
    try:
        head = [(tensors["fidelity{0}.w".format(s)], float(tensors["fidelity{0}.b".format(s)][0])) for s in heads]
    except KeyError as err:
        raise DataError("checkpoint is missing tensor {0}".format(err)) from err
    return stage_params, head


def save_params(stage_params, head=None):
    """Checkpoint content of :func:`named_tensors`."""
    return dump_named_tensors(named_tensors(stage_params, head))


def load_params(content):
    """Inverse of :func:`save_params`; returns ``(stage_params, head)``."""
    return params_from_tensors(parse_named_tensors(content))
