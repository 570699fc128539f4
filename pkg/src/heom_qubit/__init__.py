"""Hierarchical equations of motion for a qubit in a Lorentzian bath and an Ornstein-Uhlenbeck stochastic field."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"
