"""Exception types shared across the package."""


class LossyTatError(Exception):
    """Base class."""


class DomainError(LossyTatError, ValueError):
    """Argument outside the domain of an operation."""


class GridResolutionError(LossyTatError):
    """The time/frequency grid does not resolve a kernel."""


class QuadratureError(LossyTatError):
    """A quadrature failed its self-convergence check."""


class SolverError(LossyTatError):
    """A linear solve could not be carried out."""


class ConfigError(LossyTatError, ValueError):
    """Invalid experiment configuration."""
