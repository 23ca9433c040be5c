# -*- coding: utf-8 -*-
"""
Linear System Core

Ground-truth machinery for discrete-time LTI systems x⁺ = A x + B u + w:
simulation, reference signals, noise streams, discrete Riccati and Lyapunov
solvers, model-based optimal tracking gains and the backward tracking-state
recursion that turns a reference preview into the feedforward signal v_t.

Everything here is a pure function of its inputs. Random draws go through an
explicit ``numpy.random.Generator`` that the caller owns.

Exposed Methods:
    simulate_step, solve_dare, dare_residual, optimal_gains, solve_dlyap,
    tracking_states, preview_tracking_state, spectral_radius, ensure_stable,
    reference_at, reference_window, random_stable_system, benchmark_system,
    benchmark_weights, benchmark_reference
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .exceptions import (
    DimensionError,
    DivergenceError,
    InstabilityError,
    ReferenceRangeError,
    SingularityError,
)
from .utils import as_matrix, as_vector, min_eigenvalue, symmetrize

logger = logging.getLogger("deepo_lqt")

STABILITY_MARGIN = 1e-9
KRONECKER_MAX_DIM = 32

BENCHMARK_A = np.array([
    [-0.229, 0.247, -0.511, 0.493],
    [0.846, 0.159, 0.722, 0.529],
    [-0.018, 0.07, 0.3, 0.758],
    [0.247, 0.546, -0.511, -0.176],
])
BENCHMARK_B_FULL = np.array([
    [-0.633, 0.938, 0.132, -0.527],
    [0.262, -0.796, 0.264, -0.350],
    [0.461, -0.180, -0.428, 0.457],
    [0.774, 0.112, -0.285, -0.168],
])


class ActuationMode(Enum):
    """Which columns of the input matrix are available."""
    FULL = "full"
    UNDER = "under"


class ReferenceKind(Enum):
    """Enumeration of supported reference signal families."""
    CONSTANT = "constant"
    SINUSOID_MIX = "sinusoid_mix"
    TABLE = "table"


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """
    State-space pair (A, B) of x⁺ = A x + B u + w.

    Parameters
    ----------
    A : array_like
        n×n state transition matrix.
    B : array_like
        n×m input matrix.
    """
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def closed_loop(self, K):
        """Return A + B K."""
        K = as_matrix(K, "K", (self.m, self.n))
        return self.A + self.B @ K

    def __repr__(self):
        return f"<LtiSystem(n={self.n}, m={self.m})>"


@dataclass(frozen=True, eq=False)
class CostWeights:
    """
    Quadratic weights of the tracking cost.

    Both matrices must be symmetric positive definite; this is checked at
    construction.
    """
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        for name, mat in (("Q", Q), ("R", R)):
            if mat.shape[0] != mat.shape[1]:
                raise DimensionError(f"{name} must be square, got {mat.shape}")
            if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(mat).max())):
                raise DimensionError(f"{name} must be symmetric")
            if min_eigenvalue(mat) <= 0.0:
                raise DimensionError(f"{name} must be positive definite")
        object.__setattr__(self, "Q", symmetrize(Q))
        object.__setattr__(self, "R", symmetrize(R))

    @classmethod
    def scaled_identity(cls, n, m, q=1.0, r=1.0):
        return cls(q * np.eye(n), r * np.eye(m))

    def check(self, sys):
        """Raise DimensionError unless the weights fit ``sys``."""
        if self.Q.shape[0] != sys.n or self.R.shape[0] != sys.m:
            raise DimensionError(
                f"weights Q{self.Q.shape}/R{self.R.shape} do not fit n={sys.n}, m={sys.m}"
            )


@dataclass(frozen=True, eq=False)
class TrackingPolicy:
    """Feedback/feedforward pair of u = K x + K_v v."""
    K: np.ndarray
    K_v: np.ndarray

    def __post_init__(self):
        K = as_matrix(self.K, "K")
        K_v = as_matrix(self.K_v, "K_v", K.shape)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "K_v", K_v)

    def __iter__(self):
        return iter((self.K, self.K_v))

    def input(self, x, v):
        return self.K @ x + self.K_v @ v


@dataclass(frozen=True, eq=False)
class DecoupledPolicy:
    """
    Reference-decoupled policy θ = [K, L] of u = K x + L δ.

    Feasibility (ρ(A + B K) < 1) is checked on demand with ``is_feasible``.
    """
    K: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        K = as_matrix(self.K, "K")
        L = as_matrix(self.L, "L", K.shape)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "L", L)

    def __iter__(self):
        return iter((self.K, self.L))

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros((m, n)), np.zeros((m, n)))

    @property
    def theta(self):
        """The m×2n stacked parameter [K, L]."""
        return np.hstack([self.K, self.L])

    @classmethod
    def from_theta(cls, theta):
        theta = as_matrix(theta, "theta")
        n = theta.shape[1] // 2
        return cls(theta[:, :n], theta[:, n:])

    def is_feasible(self, sys, margin=STABILITY_MARGIN):
        return spectral_radius(sys.closed_loop(self.K)) < 1.0 - margin


@dataclass(frozen=True, eq=False)
class ReferenceSignal:
    """
    Reference trajectory z_t.

    ``constant`` uses ``value``; ``sinusoid_mix`` evaluates, per component,
    ``amplitude*sin(frequency*t + phase) + slope*t + offset``; ``table`` looks
    up row ``t`` of ``table``.

    ``bound`` is the declared sup-norm z̄; when omitted it is measured over the
    window requested through ``sup_norm``.
    """
    kind: ReferenceKind
    value: Optional[np.ndarray] = None
    amplitude: Optional[np.ndarray] = None
    frequency: Optional[np.ndarray] = None
    phase: Optional[np.ndarray] = None
    slope: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    table: Optional[np.ndarray] = None
    bound: Optional[float] = None

    @classmethod
    def constant(cls, value, bound=None):
        value = as_vector(value, "value")
        return cls(ReferenceKind.CONSTANT, value=value, bound=bound)

    @classmethod
    def sinusoid_mix(cls, amplitude, frequency, slope=None, offset=None, phase=None,
                     bound=None):
        amplitude = as_vector(amplitude, "amplitude")
        n = amplitude.shape[0]

        def _vec(v, name):
            return np.zeros(n) if v is None else as_vector(v, name, n)

        return cls(
            ReferenceKind.SINUSOID_MIX,
            amplitude=amplitude,
            frequency=as_vector(frequency, "frequency", n),
            phase=_vec(phase, "phase"),
            slope=_vec(slope, "slope"),
            offset=_vec(offset, "offset"),
            bound=bound,
        )

    @classmethod
    def from_table(cls, table, bound=None):
        table = as_matrix(table, "table")
        return cls(ReferenceKind.TABLE, table=table, bound=bound)

    @property
    def dim(self):
        if self.kind is ReferenceKind.CONSTANT:
            return self.value.shape[0]
        if self.kind is ReferenceKind.SINUSOID_MIX:
            return self.amplitude.shape[0]
        return self.table.shape[1]

    def sup_norm(self, t_end):
        """Declared bound z̄, or max ‖z_t‖ over 0 ≤ t ≤ t_end when none was declared."""
        if self.bound is not None:
            return float(self.bound)
        if self.kind is ReferenceKind.TABLE:
            t_end = min(t_end, self.table.shape[0] - 1)
        block = reference_window(self, 0, t_end + 1)
        return float(np.linalg.norm(block, axis=1).max())


@dataclass(frozen=True)
class NoiseModel:
    """
    Gaussian process and exploration noise levels.

    Parameters
    ----------
    process_std : float
        σ_w of w_t ~ N(0, σ_w² I).
    exploration_std : float
        σ_e of the online exploration e_t ~ N(0, σ_e² I).
    seed : int
        Seed of the counter-based (Philox) generator.
    precollect_std : float, optional
        Input standard deviation used while pre-collecting data. Defaults to
        ``exploration_std``.
    """
    process_std: float = 0.0
    exploration_std: float = 0.0
    seed: int = 0
    precollect_std: Optional[float] = None

    def __post_init__(self):
        if self.process_std < 0 or self.exploration_std < 0:
            raise ValueError("noise standard deviations must be nonnegative")
        if self.precollect_std is not None and self.precollect_std < 0:
            raise ValueError("precollect_std must be nonnegative")

    def make_rng(self, stream=0):
        """A fresh generator; identical (seed, stream) pairs give identical draws."""
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, stream])))

    def process(self, rng, n):
        return self.process_std * rng.standard_normal(n)

    def exploration(self, rng, m):
        return self.exploration_std * rng.standard_normal(m)

    def precollection(self, rng, m):
        std = self.exploration_std if self.precollect_std is None else self.precollect_std
        return std * rng.standard_normal(m)


def simulate_step(sys, x, u, w=None):
    """
    Advance the system one step.

    Parameters
    ----------
    sys : LtiSystem
    x : array_like
        Current state (length n).
    u : array_like
        Input (length m).
    w : array_like, optional
        Process noise (length n). Zero when omitted.

    Returns
    -------
    numpy.ndarray
        A x + B u + w.

    Example
    -------
    >>> sys = LtiSystem(np.zeros((2, 2)), np.eye(2))
    >>> simulate_step(sys, [3.0, -1.0], [1.0, 1.0])
    array([1., 1.])
    """
    x = as_vector(x, "x", sys.n)
    u = as_vector(u, "u", sys.m)
    out = sys.A @ x + sys.B @ u
    if w is not None:
        out = out + as_vector(w, "w", sys.n)
    return out


def spectral_radius(mat):
    """Largest eigenvalue modulus of a square matrix."""
    mat = as_matrix(mat, "matrix")
    if mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {mat.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def ensure_stable(A_cl, what="closed loop", margin=STABILITY_MARGIN):
    """
    Check Schur stability of ``A_cl`` and return its spectral radius.

    Raises
    ------
    InstabilityError
        If ρ(A_cl) ≥ 1.
    """
    rho = spectral_radius(A_cl)
    if rho >= 1.0:
        raise InstabilityError(f"{what} is not Schur stable: rho={rho:.12g}", rho=rho)
    if rho >= 1.0 - margin:
        logger.warning(f"{what} is within the stability margin: rho={rho:.12g}")
    return rho


def dare_residual(sys, weights, P):
    """Frobenius norm of Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA − P."""
    A, B, Q, R = sys.A, sys.B, weights.Q, weights.R
    a_p_b = A.T @ P @ B
    rhs = Q + A.T @ P @ A - a_p_b @ np.linalg.solve(R + B.T @ P @ B, a_p_b.T)
    return float(np.linalg.norm(rhs - P, "fro"))


def solve_dare(sys, weights, tol=1e-12, max_iter=100_000, damping=0.0):
    """
    Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA from P₀ = Q. With
    ``damping`` ∈ [0, 1) the update is blended with the previous iterate.

    Parameters
    ----------
    sys : LtiSystem
    weights : CostWeights
    tol : float, optional
        Stop when the largest entry change is below ``tol·max(1, max|P|)``.
    max_iter : int, optional
        Iteration cap. Default is 100000.
    damping : float, optional
        Weight kept on the previous iterate. Default is 0.

    Returns
    -------
    numpy.ndarray
        The stabilizing solution P = Pᵀ ≻ 0.

    Raises
    ------
    DivergenceError
        If the cap is reached (typically (A, B) not stabilizable) or the
        limit is not positive definite.
    """
    weights.check(sys)
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    A, B, Q, R = sys.A, sys.B, weights.Q, weights.R
    P = Q.copy()
    for iteration in range(1, max_iter + 1):
        a_p = A.T @ P
        a_p_b = a_p @ B
        try:
            P_next = Q + a_p @ A - a_p_b @ np.linalg.solve(R + B.T @ P @ B, a_p_b.T)
        except np.linalg.LinAlgError as e:
            raise DivergenceError(f"DARE iteration broke down: {e}", iterations=iteration)
        P_next = symmetrize(P_next)
        if damping:
            P_next = (1.0 - damping) * P_next + damping * P
        if not np.all(np.isfinite(P_next)):
            raise DivergenceError("DARE iteration overflowed", iterations=iteration)
        step = np.abs(P_next - P).max()
        P = P_next
        if step < tol * max(1.0, np.abs(P).max()):
            break
    else:
        residual = dare_residual(sys, weights, P)
        raise DivergenceError(
            f"DARE did not converge in {max_iter} iterations (residual {residual:.3e})",
            residual=residual,
            iterations=max_iter,
        )
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise DivergenceError(
            "DARE limit is not positive definite",
            residual=dare_residual(sys, weights, P),
            iterations=iteration,
        )
    logger.debug(f"DARE converged in {iteration} iterations")
    return P


def optimal_gains(sys, weights):
    """
    Model-based optimal tracking gains.

    Returns
    -------
    tuple of (TrackingPolicy, DecoupledPolicy)
        ``(K*, K_v*)`` with K* = −(R+BᵀPB)⁻¹BᵀPA, K_v* = (R+BᵀPB)⁻¹Bᵀ and
        ``(K*, L*)`` with L* = K_v*(I − A − BK*)⁻ᵀQ.

    Example
    -------
    >>> sys = LtiSystem([[0.0]], [[1.0]])
    >>> tracking, decoupled = optimal_gains(sys, CostWeights([[1.0]], [[1.0]]))
    >>> float(tracking.K_v[0, 0]), float(decoupled.L[0, 0])
    (0.5, 0.5)
    """
    P = solve_dare(sys, weights)
    A, B = sys.A, sys.B
    S = weights.R + B.T @ P @ B
    K = -np.linalg.solve(S, B.T @ P @ A)
    K_v = np.linalg.solve(S, B.T)
    A_cl = A + B @ K
    ensure_stable(A_cl, "optimal closed loop")
    try:
        L = np.linalg.solve(np.eye(sys.n) - A_cl, K_v.T).T @ weights.Q
    except np.linalg.LinAlgError:
        raise SingularityError("I - A - B K* is singular")
    return TrackingPolicy(K, K_v), DecoupledPolicy(K, L)


def solve_dlyap(A_cl, S, transpose=False):
    """
    Solve the discrete Lyapunov equation X = S + A_cl X A_clᵀ.

    With ``transpose=True`` solves X = S + A_clᵀ X A_cl instead (the
    value-function orientation used for P_K).

    Dimensions up to 32 use a direct Kronecker-vectorised solve; larger
    problems sum the series by squaring (A, A², A⁴, ...).

    Raises
    ------
    InstabilityError
        If ρ(A_cl) ≥ 1.
    """
    A = as_matrix(A_cl, "A_cl")
    S = as_matrix(S, "S", A.shape)
    if transpose:
        A = A.T
    ensure_stable(A, "Lyapunov operator")
    n = A.shape[0]
    if n <= KRONECKER_MAX_DIM:
        lhs = np.eye(n * n) - np.kron(A, A)
        X = np.linalg.solve(lhs, S.reshape(-1, order="F")).reshape((n, n), order="F")
    else:
        X = S.copy()
        power = A.copy()
        for _ in range(64):
            X = X + power @ X @ power.T
            power = power @ power
            if np.abs(power).max() < 1e-18:
                break
    if np.allclose(S, S.T):
        X = symmetrize(X)
    return X


def tracking_states(A_cl, Q, refs):
    """
    Backward tracking-state recursion over a reference window.

    Starts from the steady-state terminal value v_N = (I − A_clᵀ)⁻¹ Q z_N and
    iterates v_s = A_clᵀ v_{s+1} + Q z_s down to s = 0.

    Parameters
    ----------
    A_cl : array_like
        n×n closed-loop matrix.
    Q : array_like
        n×n state weight.
    refs : array_like
        (N+1)×n block of references z_0..z_N.

    Returns
    -------
    numpy.ndarray
        (N+1)×n block of v_0..v_N.
    """
    A_cl = as_matrix(A_cl, "A_cl")
    n = A_cl.shape[0]
    Q = as_matrix(Q, "Q", (n, n))
    refs = as_matrix(refs, "refs", (None, n))
    weighted = refs @ Q.T
    out = np.empty_like(weighted)
    try:
        out[-1] = np.linalg.solve(np.eye(n) - A_cl.T, weighted[-1])
    except np.linalg.LinAlgError:
        raise SingularityError("I - A_cl^T is singular; no steady-state tracking state")
    A_t = A_cl.T
    for s in range(refs.shape[0] - 2, -1, -1):
        out[s] = A_t @ out[s + 1] + weighted[s]
    return out


def preview_tracking_state(A_cl, Q, refs):
    """
    Tracking state v_t from an (N+1)-step reference preview z_t..z_{t+N}.

    Example
    -------
    >>> preview_tracking_state([[0.5]], [[1.0]], np.ones((200, 1)))
    array([2.])
    """
    return tracking_states(A_cl, Q, refs)[0]


def reference_window(ref, t0, count):
    """Stack z_{t0}..z_{t0+count-1} into a count×n array."""
    if t0 < 0:
        raise ValueError("reference time must be nonnegative")
    ts = np.arange(t0, t0 + count, dtype=float)
    if ref.kind is ReferenceKind.CONSTANT:
        return np.tile(ref.value, (count, 1))
    if ref.kind is ReferenceKind.SINUSOID_MIX:
        return (ref.amplitude * np.sin(np.outer(ts, ref.frequency) + ref.phase)
                + np.outer(ts, ref.slope) + ref.offset)
    if t0 + count > ref.table.shape[0]:
        raise ReferenceRangeError(
            f"reference table has {ref.table.shape[0]} rows, requested up to t={t0 + count - 1}"
        )
    return ref.table[t0:t0 + count].copy()


def reference_at(ref, t):
    """
    Evaluate the reference at time ``t``.

    Example
    -------
    >>> reference_at(benchmark_reference(), 0)
    array([ 0.,  0.,  0., 10.])
    """
    return reference_window(ref, t, 1)[0]


def random_stable_system(n, m, rng, radius=0.9):
    """Gaussian (A, B) with A rescaled to spectral radius ``radius``."""
    A = rng.standard_normal((n, n))
    A *= radius / max(spectral_radius(A), 1e-12)
    B = rng.standard_normal((n, m))
    return LtiSystem(A, B)


def benchmark_system(actuation=ActuationMode.FULL, under_inputs=2):
    """
    The open-loop stable 4-state benchmark system.

    ``ActuationMode.UNDER`` keeps the first ``under_inputs`` columns of the
    fully actuated input matrix.
    """
    actuation = ActuationMode(actuation)
    B = BENCHMARK_B_FULL if actuation is ActuationMode.FULL else BENCHMARK_B_FULL[:, :under_inputs]
    return LtiSystem(BENCHMARK_A.copy(), B.copy())


def benchmark_weights(m):
    """Q = I₄, R = 0.01·I_m."""
    return CostWeights(np.eye(4), 0.01 * np.eye(m))


def benchmark_reference():
    """z_t = [50 sin(0.003t), 0.003t, 50 sin(0.009t), 10]ᵀ."""
    return ReferenceSignal.sinusoid_mix(
        amplitude=[50.0, 0.0, 50.0, 0.0],
        frequency=[0.003, 0.0, 0.009, 0.0],
        slope=[0.0, 0.003, 0.0, 0.0],
        offset=[0.0, 0.0, 0.0, 10.0],
    )
