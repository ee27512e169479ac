"""Exception types shared across the package."""


class MbhtdvError(Exception):
    """Base class for all package errors."""


class LatticeError(MbhtdvError):
    """Band-structure / Wannier construction failure (bad cutoff, degeneracy, ...)."""


class ConfigError(MbhtdvError):
    """Invalid configuration file or command-line input."""


class ConvergenceError(MbhtdvError):
    """An iterative solver failed to reach its tolerance."""


class NumericsError(MbhtdvError):
    """A numerical contract was violated (norm drift, singular density, quadrature)."""


class DimensionLimitError(MbhtdvError):
    """A requested Fock space exceeds the configured size limit."""
