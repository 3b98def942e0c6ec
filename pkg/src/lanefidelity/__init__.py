"""Lane localization fidelity: overlap, calibration, gated refinement and evaluation of lane priors."""

__version__ = "0.1.0"
