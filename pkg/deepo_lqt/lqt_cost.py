# -*- coding: utf-8 -*-
"""
Reference-Decoupled Tracking Cost

The tracking cost C(θ) summed over the n unit set-points and its gradient,
evaluated either on a model (A, B) or directly on data covariances through
ξ = [V, H]. Both spaces run through one core that only sees

    A_cl    closed loop            (A + BK   or  X̄₁V)
    BL      set-point drive        (BL       or  X̄₁H)
    K, L    applied gains          (K, L     or  Ū₀V, Ū₀H)
    S_x     state sensitivity      (B        or  X̄₁)
    S_u     input sensitivity      (I        or  Ū₀)

so the data-space formulas are the model-space ones with (A, B) replaced by
the data blocks.

Exposed Methods:
    model_cost, model_cost_alt, per_setpoint_cost, model_grad,
    model_cost_cache, data_cost, data_grad, data_cost_cache, optimal_cost
"""
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import InfeasiblePolicyError
from .lti_core import STABILITY_MARGIN, optimal_gains, solve_dlyap, spectral_radius
from .utils import as_matrix

logger = logging.getLogger("deepo_lqt")

CONSTRAINT_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class ModelCostCache:
    """
    Policy-dependent matrices of C(θ) on a model.

    P_K solves P = Q + KᵀRK + A_clᵀPA_cl, Sigma_K solves Σ = I + A_clΣA_clᵀ,
    Y_K = (I − A_cl)⁻¹ and Z_theta = Y_K·B·L.
    """
    P_K: np.ndarray
    Y_K: np.ndarray
    G_theta: np.ndarray
    Sigma_K: np.ndarray
    E_K: np.ndarray
    F_theta: np.ndarray
    Z_theta: np.ndarray
    Phi: np.ndarray
    cost: float
    gradient: np.ndarray
    rho: float


@dataclass(frozen=True, eq=False)
class DataCostCache:
    """Policy-dependent matrices of C(ξ) on data covariances (shapes follow ξ = [V, H])."""
    P_V: np.ndarray
    Y_V: np.ndarray
    G_xi: np.ndarray
    Sigma_V: np.ndarray
    E_V: np.ndarray
    F_xi: np.ndarray
    Z_xi: np.ndarray
    Phi_xi: np.ndarray
    cost: float
    gradient: np.ndarray
    rho: float
    residual: float


def _cost_core(A_cl, BL, K, L, Q, R, S_x, S_u):
    n = A_cl.shape[0]
    eye = np.eye(n)
    P = solve_dlyap(A_cl, Q + K.T @ R @ K, transpose=True)
    Y = np.linalg.inv(eye - A_cl)
    P_BL = P @ BL
    G = Y.T @ (-Q + K.T @ R @ L + A_cl.T @ P_BL)
    Sigma = solve_dlyap(A_cl, eye)
    Z = Y @ BL
    cost = float(np.trace(Q + L.T @ R @ L + BL.T @ P_BL + n * P + 2.0 * G.T @ BL))
    E = S_u.T @ R @ K + S_x.T @ P @ A_cl
    F = S_x.T @ G + S_u.T @ R @ L + S_x.T @ P_BL
    Phi = np.block([[n * Sigma + Z @ Z.T, Z], [Z.T, eye]])
    gradient = 2.0 * np.hstack([E, F]) @ Phi
    return P, Y, G, Sigma, E, F, Z, Phi, cost, gradient


def _check_spectral(A_cl, margin):
    rho = spectral_radius(A_cl)
    if rho >= 1.0 - margin:
        raise InfeasiblePolicyError(f"closed loop is not stabilizing: rho={rho:.12g}", rho=rho)
    return rho


def model_cost_cache(sys, weights, theta, margin=STABILITY_MARGIN):
    """
    Evaluate C(θ) and ∇_θC(θ) on the model ``sys``.

    Raises
    ------
    InfeasiblePolicyError
        If ρ(A + BK) ≥ 1 − margin.
    """
    weights.check(sys)
    K = as_matrix(theta.K, "K", (sys.m, sys.n))
    L = as_matrix(theta.L, "L", (sys.m, sys.n))
    A_cl = sys.closed_loop(K)
    rho = _check_spectral(A_cl, margin)
    terms = _cost_core(A_cl, sys.B @ L, K, L, weights.Q, weights.R, sys.B, np.eye(sys.m))
    return ModelCostCache(*terms, rho=rho)


def model_cost(sys, weights, theta):
    """
    Reference-decoupled cost C(θ) = tr(Q + LᵀRL + LᵀBᵀP_K BL + nP_K + 2G_θᵀBL).

    Example
    -------
    >>> from deepo_lqt.lti_core import CostWeights, DecoupledPolicy, LtiSystem
    >>> sys = LtiSystem([[0.0]], [[1.0]])
    >>> model_cost(sys, CostWeights([[1.0]], [[1.0]]), DecoupledPolicy([[0.0]], [[0.5]]))
    1.5
    """
    return model_cost_cache(sys, weights, theta).cost


def model_grad(sys, weights, theta):
    """Gradient ∇_θC = 2[E_K, F_θ]Φ(θ), returned as the m×2n block [∂/∂K, ∂/∂L]."""
    return model_cost_cache(sys, weights, theta).gradient


def model_cost_alt(sys, weights, theta, margin=STABILITY_MARGIN):
    """
    C(θ) in closed-loop steady-state form.

    tr((Z − I)ᵀQ(Z − I) + (KZ + L)ᵀR(KZ + L) + nP_K) with Z = (I − A − BK)⁻¹BL.
    """
    weights.check(sys)
    K, L = theta.K, theta.L
    A_cl = sys.closed_loop(K)
    _check_spectral(A_cl, margin)
    Q, R = weights.Q, weights.R
    n = sys.n
    eye = np.eye(n)
    P = solve_dlyap(A_cl, Q + K.T @ R @ K, transpose=True)
    Z = np.linalg.solve(eye - A_cl, sys.B @ L)
    offset = Z - eye
    drive = K @ Z + L
    return float(np.trace(offset.T @ Q @ offset + drive.T @ R @ drive + n * P))


def per_setpoint_cost(sys, weights, theta, i, margin=STABILITY_MARGIN):
    """
    Cost Cⁱ(θ) of regulating to the unit set-point eⁱ (``i`` is 1-based).

    Summing over i = 1..n gives C(θ).
    """
    if not 1 <= i <= sys.n:
        raise IndexError(f"set-point index {i} outside 1..{sys.n}")
    weights.check(sys)
    K, L = theta.K, theta.L
    A_cl = sys.closed_loop(K)
    _check_spectral(A_cl, margin)
    Q, R = weights.Q, weights.R
    P = solve_dlyap(A_cl, Q + K.T @ R @ K, transpose=True)
    e = np.zeros(sys.n)
    e[i - 1] = 1.0
    BL_e = sys.B @ L @ e
    g = np.linalg.solve(np.eye(sys.n) - A_cl.T, -Q @ e + K.T @ R @ L @ e + A_cl.T @ P @ BL_e)
    L_e = L @ e
    return float(e @ Q @ e + L_e @ R @ L_e + BL_e @ P @ BL_e + np.trace(P) + 2.0 * g @ BL_e)


def data_cost_cache(cov, weights, xi, margin=STABILITY_MARGIN):
    """
    Evaluate C(ξ) and ∇_ξC(ξ) on data covariances.

    Raises
    ------
    InfeasiblePolicyError
        If ‖X̄₀V − I‖_F + ‖X̄₀H‖_F exceeds 1e-8 or ρ(X̄₁V) ≥ 1 − margin.
    """
    residual = xi.constraint_residual(cov)
    if residual > CONSTRAINT_TOLERANCE:
        raise InfeasiblePolicyError(
            f"xi violates the data constraints: residual={residual:.3e}", residual=residual
        )
    A_cl = cov.Xbar1 @ xi.V
    rho = _check_spectral(A_cl, margin)
    K = cov.Ubar0 @ xi.V
    L = cov.Ubar0 @ xi.H
    terms = _cost_core(A_cl, cov.Xbar1 @ xi.H, K, L, weights.Q, weights.R, cov.Xbar1, cov.Ubar0)
    return DataCostCache(*terms, rho=rho, residual=residual)


def data_cost(cov, weights, xi):
    """C(ξ); equals C(θ) on the least-squares model at θ = (Ū₀V, Ū₀H)."""
    return data_cost_cache(cov, weights, xi).cost


def data_grad(cov, weights, xi):
    """Gradient ∇_ξC = 2[E_V, F_ξ]Φ_ξ as the (m+n)×2n block [∂/∂V, ∂/∂H]."""
    return data_cost_cache(cov, weights, xi).gradient


def optimal_cost(sys, weights):
    """C(θ*) at the Riccati optimum of ``sys``."""
    _, decoupled = optimal_gains(sys, weights)
    return model_cost(sys, weights, decoupled)
