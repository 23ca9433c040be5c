# -*- coding: utf-8 -*-
"""
Error hierarchy for deepo_lqt.

Every failure the library reports on purpose derives from ``DeePOError`` so
callers can catch the whole family in one clause. Numerical errors coming out
of numpy are translated into one of these at the module boundary.
"""


class DeePOError(Exception):
    """Base class for all deepo_lqt errors."""
    pass


class DimensionError(DeePOError, ValueError):
    """Raised when array shapes violate an operation's contract."""
    pass


class DivergenceError(DeePOError):
    """
    Raised when an iterative solver hits its iteration cap.

    Attributes
    ----------
    residual : float
        Last residual reached before giving up.
    iterations : int
        Number of iterations performed.
    """
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InstabilityError(DeePOError):
    """Raised when a closed-loop matrix with ρ ≥ 1 is used where stability is required."""
    def __init__(self, message, rho=float("nan")):
        super().__init__(message)
        self.rho = rho


class ReferenceRangeError(DeePOError, IndexError):
    """Raised when a reference table is read past its last row."""
    pass


class SingularityError(DeePOError):
    """Raised when a matrix that must be inverted is singular."""
    pass


class ExcitationError(DeePOError):
    """Raised when data fail the persistent-excitation rank condition."""
    def __init__(self, message, sigma_min=0.0):
        super().__init__(message)
        self.sigma_min = sigma_min


class InfeasiblePolicyError(DeePOError):
    """
    Raised when a policy lies outside the feasible set.

    Attributes
    ----------
    rho : float
        Spectral radius of the closed loop (nan when the affine constraints failed first).
    residual : float
        Affine constraint residual ``||X0 V - I||_F + ||X0 H||_F`` (nan for model policies).
    """
    def __init__(self, message, rho=float("nan"), residual=float("nan")):
        super().__init__(message)
        self.rho = rho
        self.residual = residual


class ConfigError(DeePOError):
    """Raised when an experiment configuration cannot be parsed or validated."""
    def __init__(self, message, path=None, line=None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class UsageError(DeePOError):
    """Raised on invalid use of the reporting or command-line surface."""
    pass
