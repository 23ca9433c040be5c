# -*- coding: utf-8 -*-
"""
Covariance Parameterization

Maps between model-space policies θ = [K, L] and data-space policies
ξ = [V, H] through the sample covariance Λ, and builds the two matrices that
shape a data-space gradient step: the projector Π onto null(X̄₀) and the
scaling matrix M = Ū₀ Π Ū₀ᵀ.

Exposed Methods:
    theta_to_xi, xi_to_theta, kv_to_l, l_to_kv, q_factor, projection,
    scaling_matrix
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data_log import covariance_solve
from .exceptions import DimensionError, SingularityError
from .lti_core import DecoupledPolicy
from .utils import as_matrix, requires_excitation, symmetrize

logger = logging.getLogger("deepo_lqt")

PINV_RCOND = 1e-12


@dataclass(frozen=True, eq=False)
class CovariancePolicy:
    """
    Data-space policy ξ = [V, H].

    Feasible when X̄₀V = I, X̄₀H = 0 and ρ(X̄₁V) < 1.
    """
    V: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        V = as_matrix(self.V, "V")
        H = as_matrix(self.H, "H", V.shape)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "H", H)

    @property
    def xi(self):
        return np.hstack([self.V, self.H])

    @classmethod
    def from_xi(cls, xi):
        xi = as_matrix(xi, "xi")
        n = xi.shape[1] // 2
        return cls(xi[:, :n], xi[:, n:])

    def closed_loop(self, cov):
        """The data-based closed loop X̄₁V."""
        return cov.Xbar1 @ self.V

    def constraint_residual(self, cov):
        """‖X̄₀V − I‖_F + ‖X̄₀H‖_F."""
        n = cov.n
        return float(np.linalg.norm(cov.Xbar0 @ self.V - np.eye(n), "fro")
                     + np.linalg.norm(cov.Xbar0 @ self.H, "fro"))


@dataclass(frozen=True, eq=False)
class ScalingMatrix:
    """M = Ū₀ΠŪ₀ᵀ with its extreme eigenvalues cached."""
    M: np.ndarray
    sigma_min: float
    norm: float


@requires_excitation()
def theta_to_xi(K, L, cov):
    """
    Re-parameterize (K, L) at the covariance ``cov``.

    V = Λ⁻¹[K; I], H = Λ⁻¹[L; 0], so X̄₀V = I and X̄₀H = 0 by construction.

    Raises
    ------
    ExcitationError
        If Λ is not positive definite.

    Example
    -------
    >>> from deepo_lqt.data_log import CovarianceData
    >>> cov = CovarianceData(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
    ...                      np.zeros((1, 2)), 1)
    >>> theta_to_xi([[0.2]], [[0.5]], cov).H
    array([[0.5],
           [0. ]])
    """
    n, m = cov.n, cov.m
    K = as_matrix(K, "K", (m, n))
    L = as_matrix(L, "L", (m, n))
    Lambda = cov.Lambda
    V = covariance_solve(Lambda, np.vstack([K, np.eye(n)]))
    H = covariance_solve(Lambda, np.vstack([L, np.zeros((n, n))]))
    return CovariancePolicy(V, H)


def xi_to_theta(xi, cov):
    """Recover θ as (K, L) = (Ū₀V, Ū₀H)."""
    if xi.V.shape[0] != cov.n + cov.m:
        raise DimensionError(f"xi has {xi.V.shape[0]} rows, covariances need {cov.n + cov.m}")
    return DecoupledPolicy(cov.Ubar0 @ xi.V, cov.Ubar0 @ xi.H)


def _check_invertible(mat, what):
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularityError(f"{what} is singular")


def kv_to_l(K_v, A_cl, Q):
    """
    Set-point gain from a feedforward gain: L = K_v(I − A_cl)⁻ᵀQ.

    Raises
    ------
    SingularityError
        If I − A_cl is singular.
    """
    A_cl = as_matrix(A_cl, "A_cl")
    n = A_cl.shape[0]
    K_v = as_matrix(K_v, "K_v", (None, n))
    Q = as_matrix(Q, "Q", (n, n))
    lhs = np.eye(n) - A_cl
    _check_invertible(lhs, "I - A_cl")
    return np.linalg.solve(lhs, K_v.T).T @ Q


def q_factor(Q):
    """Cholesky factor of Q for repeated use in ``l_to_kv``."""
    return linalg.cho_factor(as_matrix(Q, "Q"), lower=True)


def l_to_kv(L, A_cl, Q, factor=None):
    """
    Feedforward gain from a set-point gain: K_v = L Q⁻¹ (I − A_cl)ᵀ.

    Exact inverse of ``kv_to_l``.

    Parameters
    ----------
    L : array_like
        m×n set-point gain.
    A_cl : array_like
        n×n closed loop used for the conversion.
    Q : array_like
        n×n state weight.
    factor : tuple, optional
        Precomputed ``q_factor(Q)``.

    Example
    -------
    >>> l_to_kv([[0.5]], [[0.0]], [[1.0]])
    array([[0.5]])
    """
    A_cl = as_matrix(A_cl, "A_cl")
    n = A_cl.shape[0]
    L = as_matrix(L, "L", (None, n))
    lhs = np.eye(n) - A_cl
    _check_invertible(lhs, "I - A_cl")
    if factor is None:
        factor = q_factor(Q)
    return linalg.cho_solve(factor, L.T).T @ lhs.T


def projection(cov):
    """
    Orthogonal projector onto null(X̄₀): Π = I − X̄₀†X̄₀.

    The pseudo-inverse cuts singular values below 1e-12·σ_max.

    Example
    -------
    >>> from deepo_lqt.data_log import CovarianceData
    >>> cov = CovarianceData(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
    ...                      np.zeros((1, 2)), 1)
    >>> projection(cov)
    array([[1., 0.],
           [0., 0.]])
    """
    Xbar0 = cov.Xbar0
    d = Xbar0.shape[1]
    return symmetrize(np.eye(d) - np.linalg.pinv(Xbar0, rcond=PINV_RCOND) @ Xbar0)


@requires_excitation()
def scaling_matrix(cov):
    """
    Scaling matrix M = Ū₀ΠŪ₀ᵀ relating data-space and model-space steps.

    Under persistent excitation M ≻ 0 with σ_min(M) ≥ γ⁴.
    """
    M = symmetrize(cov.Ubar0 @ projection(cov) @ cov.Ubar0.T)
    vals = np.linalg.eigvalsh(M)
    return ScalingMatrix(M, float(vals[0]), float(vals[-1]))
