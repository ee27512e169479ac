"""Multiband Bose-Hubbard and variational single-mode dynamics for 1D lattice bosons."""

__version__ = "0.1.0"

from .errors import (
    MbhtdvError,
    LatticeError,
    ConfigError,
    ConvergenceError,
    NumericsError,
    DimensionLimitError,
)

__all__ = [
    "__version__",
    "MbhtdvError",
    "LatticeError",
    "ConfigError",
    "ConvergenceError",
    "NumericsError",
    "DimensionLimitError",
]
