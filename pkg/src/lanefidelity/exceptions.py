"""
Exception types raised by the lanefidelity package.

All data and configuration problems derive from ``ValueError`` so callers can
keep catching the builtin, while the command line can still map each family to
its own exit code.
"""


class ConfigError(ValueError):
    """Schema or value problem in a configuration, reported with its key path."""


class DataError(ValueError):
    """Malformed input data: parse errors, missing files, empty inputs."""


class ShapeError(DataError):
    """Array lengths or dimensions that do not match."""


class GradientCheckError(ValueError):
    """A finite-difference evaluation returned a non-finite value."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""


class AcceptanceError(RuntimeError):
    """A measured figure missed its acceptance bound."""
