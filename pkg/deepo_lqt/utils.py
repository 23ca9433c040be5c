# -*- coding: utf-8 -*-
"""
Shared matrix helpers and decorators.

Exposed Methods:
    as_matrix, as_vector, symmetrize, min_eigenvalue, requires_excitation
"""
from functools import wraps

import numpy as np

from .exceptions import DimensionError, ExcitationError

PE_TOLERANCE = 1e-8


def as_matrix(value, name, shape=None):
    """
    Convert ``value`` to a 2-D float array and optionally check its shape.

    Parameters
    ----------
    value : array_like
        Scalar, nested list or array.
    name : str
        Used in the error message.
    shape : tuple of int, optional
        Required shape. ``None`` entries are wildcards.

    Returns
    -------
    numpy.ndarray
        A 2-D ``float64`` array (scalars become 1x1).

    Raises
    ------
    DimensionError
        If the array is not 2-D or its shape differs from ``shape``.
    """
    arr = np.array(value, dtype=float, ndmin=2)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got ndim={arr.ndim}")
    if shape is not None:
        for got, want in zip(arr.shape, shape):
            if want is not None and got != want:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def as_vector(value, name, size=None):
    """Convert ``value`` to a flat float vector, checking its length when ``size`` is given."""
    arr = np.asarray(value, dtype=float).reshape(-1)
    if size is not None and arr.shape[0] != size:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {size}")
    return arr


def symmetrize(mat):
    return 0.5 * (mat + mat.T)


def min_eigenvalue(mat):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(mat))[0])


def requires_excitation(tol=PE_TOLERANCE):
    """
    Decorator to gate functions on persistently exciting data.

    The decorated function must take a ``CovarianceData`` either as keyword
    ``cov`` or as its last positional argument. Before the call the smallest
    eigenvalue of ``cov.Lambda`` is compared against ``tol``.

    Parameters
    ----------
    tol : float, optional
        Threshold on σ_min(Λ). Default is 1e-8.

    Raises
    ------
    ExcitationError
        If σ_min(Λ) ≤ ``tol``.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            cov = kwargs.get("cov")
            if cov is None:
                cov = args[-1]
            sigma = min_eigenvalue(cov.Lambda)
            if sigma <= tol:
                raise ExcitationError(
                    f"'{func.__name__}' requires persistently exciting data: "
                    f"sigma_min(Lambda)={sigma:.3e} <= {tol:.1e}",
                    sigma_min=sigma,
                )
            return func(*args, **kwargs)
        return wrapper
    return decorator
