"""Exception types shared across the package."""


class FolocError(Exception):
    """Base class for all package errors."""


class ConfigError(FolocError):
    """Invalid or inconsistent configuration input."""


class NoEquilibrium(FolocError):
    """Machine equilibrium solve failed to converge within its budget."""


class SingularAlgebraicBlock(FolocError):
    """Algebraic Jacobian could not be eliminated during linearization."""


class ResonantBin(FolocError):
    """Resolvent (jW*I - A) numerically singular at a grid bin."""


class EmptyBand(FolocError):
    """No grid bin falls inside the requested frequency band."""


class GridMismatch(FolocError):
    """FRF and spectral dataset are tabulated on different grids."""


class NotPositiveDefinite(FolocError):
    """Covariance matrix is not positive definite."""


class IndefiniteHessian(FolocError):
    """Hessian at the solution is not positive definite."""


class MaxIterations(FolocError):
    """Optimizer exhausted its iteration budget."""


class IntegrationDiverged(FolocError):
    """Time-domain simulation produced non-finite states."""
