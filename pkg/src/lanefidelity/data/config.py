"""
Experiment configuration.

A configuration is a JSON document naming a preset and optionally
overriding single fields per section::

    {"preset": "culane", "postprocess": {"top_k": 6}, "train": {"iterations": 200}}

Presets live as JSON files next to this module.
"""

import dataclasses
import json
import os
import warnings
from dataclasses import dataclass, field

from ..evaluation.metrics import EvalConfig
from ..exceptions import ConfigError
from ..models.calibrate import CriConfig
from ..models.overlap import WidthModel
from ..models.postprocess import PostprocessConfig
from ..models.refine import AglrConfig, ModulationConfig
from ..optimization.assign import AssignConfig
from ..optimization.losses import LossWeights
from ..optimization.train_toy import TrainConfig
from .synthetic import NoiseModel, SceneSpec

ENV_VAR = "LANEFIDELITY_CONFIG"
PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")

SECTIONS = {
    "width": WidthModel,
    "assign": AssignConfig,
    "cri": CriConfig,
    "modulation": ModulationConfig,
    "loss_weights": LossWeights,
    "postprocess": PostprocessConfig,
    "eval": EvalConfig,
    "scene": SceneSpec,
    "noise": NoiseModel,
    "aglr": AglrConfig,
    "train": TrainConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "culane"
    width: WidthModel = field(default_factory=WidthModel)
    assign: AssignConfig = field(default_factory=AssignConfig)
    cri: CriConfig = field(default_factory=CriConfig)
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    aglr: AglrConfig = field(default_factory=AglrConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def as_dict(self):
        out = {"preset": self.preset}
        for name in SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        return out


def available_presets():
    return sorted(name[:-5] for name in os.listdir(PRESET_DIR) if name.endswith(".json"))


def get_preset(name):
    """
    Section overrides of a named preset.

    Parameters
    ----------
    name : str
        ``culane``, ``curvelanes`` or ``assumed-defaults``.

    Returns
    -------
    preset : dict
    """
    path = os.path.join(PRESET_DIR, "{0}.json".format(name))
    if not os.path.isfile(path):
        raise ConfigError("preset: unknown preset '{0}', choose from {1}".format(name, available_presets()))
    with open(path, "r", encoding="utf-8") as fh:
        preset = json.load(fh)
    preset.pop("description", None)
    return preset


def _coerce(cls, values):
    """Turn JSON lists into tuples where the dataclass default is a tuple."""
    out = dict(values)
    for f in dataclasses.fields(cls):
        if f.name in out and isinstance(out[f.name], list) and isinstance(f.default, tuple):
            out[f.name] = tuple(out[f.name])
    return out


def _build_section(name, values, lenient, extra=None):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError("{0}: expected an object, got {1}".format(name, type(values).__name__))
    known = {f.name for f in dataclasses.fields(cls)}
    values = dict(values)
    for key in sorted(set(values) - known):
        message = "{0}.{1}: unknown key".format(name, key)
        if not lenient:
            raise ConfigError(message)
        warnings.warn(message)
        values.pop(key)
    values = _coerce(cls, values)
    values.update(extra or {})
    try:
        return cls(**values)
    except (TypeError, ValueError) as err:
        raise ConfigError("{0}: {1}".format(name, err)) from err


def load_config(content, lenient=False):
    """
    Build every module configuration from a JSON document.

    Parameters
    ----------
    content : str or dict
        JSON text or an already parsed document. The key ``preset`` is
        required.
    lenient : bool
        Downgrade unknown keys from errors to warnings.

    Returns
    -------
    config : ExperimentConfig

    Example use
    -----------
    config = load_config('{"preset": "curvelanes"}')
    config.cri       # CriConfig(beta0=0.6, beta1=0.4)
    """
    if isinstance(content, str):
        try:
            doc = json.loads(content)
        except ValueError as err:
            raise ConfigError("invalid JSON: {0}".format(err)) from err
    else:
        doc = content
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    if "preset" not in doc:
        raise ConfigError("preset: missing required key")

    merged = {name: {} for name in SECTIONS}
    for name, values in get_preset(doc["preset"]).items():
        merged[name].update(values)
    for key in sorted(set(doc) - {"preset"}):
        if key not in SECTIONS:
            message = "{0}: unknown key".format(key)
            if not lenient:
                raise ConfigError(message)
            warnings.warn(message)
            continue
        if not isinstance(doc[key], dict):
            raise ConfigError("{0}: expected an object, got {1}".format(key, type(doc[key]).__name__))
        merged[key].update(doc[key])

    sections = {name: _build_section(name, merged[name], lenient)
                for name in SECTIONS if name != "train"}
    sections["train"] = _build_section("train", merged["train"], lenient,
                                       extra={"loss_weights": sections["loss_weights"]})
    return ExperimentConfig(preset=doc["preset"], **sections)


def load_config_file(path=None, lenient=False):
    """
    Read a configuration file; without a path, fall back to the
    ``LANEFIDELITY_CONFIG`` environment variable and then to the ``culane``
    preset.
    """
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return load_config({"preset": "culane"}, lenient)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            content = fh.read()
    except OSError as err:
        raise ConfigError("{0}: {1}".format(path, err.strerror or err)) from err
    return load_config(content, lenient)
