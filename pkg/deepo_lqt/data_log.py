# -*- coding: utf-8 -*-
"""
Trajectory Data

Storage for collected trajectories (X0, U0, X1), their sample covariances
kept up to date by rank-one updates, persistent-excitation and
signal-to-noise diagnostics, and the least-squares system estimate.

True process noises (W0) may be recorded alongside the data. They are read
only by ``snr_diagnostics`` and test oracles; nothing on a policy path
touches them.

Exposed Methods:
    append_sample, pe_check, covariance_solve, ls_identify, snr_diagnostics,
    collect_trajectory, save_csv, load_csv
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy import linalg

from .exceptions import ConfigError, DimensionError
from .lti_core import LtiSystem, simulate_step
from .utils import (
    PE_TOLERANCE,
    as_matrix,
    as_vector,
    min_eigenvalue,
    requires_excitation,
    symmetrize,
)

logger = logging.getLogger("deepo_lqt")

EIGEN_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DataLog:
    """
    Column blocks of a collected trajectory.

    Attributes
    ----------
    X0 : numpy.ndarray
        n×t states x_0..x_{t-1}.
    U0 : numpy.ndarray
        m×t inputs.
    X1 : numpy.ndarray
        n×t successor states.
    W0 : numpy.ndarray or None
        n×t true process noises, when recorded.
    """
    X0: np.ndarray
    U0: np.ndarray
    X1: np.ndarray
    W0: Optional[np.ndarray] = None

    def __post_init__(self):
        X0 = as_matrix(self.X0, "X0")
        U0 = as_matrix(self.U0, "U0", (None, X0.shape[1]))
        X1 = as_matrix(self.X1, "X1", X0.shape)
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "U0", U0)
        object.__setattr__(self, "X1", X1)
        if self.W0 is not None:
            object.__setattr__(self, "W0", as_matrix(self.W0, "W0", X0.shape))

    @classmethod
    def empty(cls, n, m, record_noise=True):
        W0 = np.zeros((n, 0)) if record_noise else None
        return cls(np.zeros((n, 0)), np.zeros((m, 0)), np.zeros((n, 0)), W0)

    @property
    def n(self):
        return self.X0.shape[0]

    @property
    def m(self):
        return self.U0.shape[0]

    @property
    def t(self):
        return self.X0.shape[1]

    @property
    def D0(self):
        """The stacked (m+n)×t block [U0; X0]."""
        return np.vstack([self.U0, self.X0])

    def __len__(self):
        return self.t

    def __repr__(self):
        return f"<DataLog(n={self.n}, m={self.m}, t={self.t})>"


@dataclass(frozen=True, eq=False)
class CovarianceData:
    """
    Sample covariances of a trajectory, normalised by the sample count t.

    ``Lambda`` is not stored; it is the row stack [Ubar0; Xbar0], so it is
    exactly symmetric whenever the blocks are consistent.
    """
    Ubar0: np.ndarray
    Xbar0: np.ndarray
    Xbar1: np.ndarray
    t: int
    Wbar0: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, n, m, record_noise=True):
        d = n + m
        Wbar0 = np.zeros((n, d)) if record_noise else None
        return cls(np.zeros((m, d)), np.zeros((n, d)), np.zeros((n, d)), 0, Wbar0)

    @classmethod
    def from_log(cls, log):
        """Batch recomputation (1/t)·[U0; X0; X1; W0]·D0ᵀ."""
        if log.t == 0:
            return cls.empty(log.n, log.m, log.W0 is not None)
        D0 = log.D0
        scale = 1.0 / log.t
        Wbar0 = None if log.W0 is None else scale * log.W0 @ D0.T
        return cls(scale * log.U0 @ D0.T, scale * log.X0 @ D0.T, scale * log.X1 @ D0.T,
                   log.t, Wbar0)

    @property
    def n(self):
        return self.Xbar0.shape[0]

    @property
    def m(self):
        return self.Ubar0.shape[0]

    @property
    def Lambda(self):
        return np.vstack([self.Ubar0, self.Xbar0])


@dataclass(frozen=True)
class DataDiagnostics:
    """
    Data-quality figures of a log.

    ``snr`` is ``inf`` when ``delta`` is zero. ``sigma_min_U`` is σ_min of the
    normalised Ū₀; ``sigma_min_U_raw`` is σ_min of the raw m×t input block.
    """
    gamma: float
    delta: float
    snr: float
    sigma_min_U: float
    sigma_min_U_raw: float
    t: int


def append_sample(log, cov, x, u, x_next, w=None):
    """
    Append one transition (x, u, x⁺) and update the covariances.

    Parameters
    ----------
    log : DataLog
    cov : CovarianceData
    x, u, x_next : array_like
        State, input and successor state.
    w : array_like, optional
        True process noise of the transition, recorded only when the log
        keeps noises.

    Returns
    -------
    tuple of (DataLog, CovarianceData)
        New values; the inputs are left untouched.

    Example
    -------
    >>> log, cov = DataLog.empty(1, 1), CovarianceData.empty(1, 1)
    >>> log, cov = append_sample(log, cov, [2.0], [1.0], [3.0], [0.0])
    >>> cov.Lambda
    array([[1., 2.],
           [2., 4.]])
    """
    n, m = log.n, log.m
    x = as_vector(x, "x", n)
    u = as_vector(u, "u", m)
    x_next = as_vector(x_next, "x_next", n)
    if cov.t != log.t or cov.n != n or cov.m != m:
        raise DimensionError(f"covariances (t={cov.t}) do not match log (t={log.t})")
    d = np.concatenate([u, x])
    t = cov.t
    keep = t / (t + 1.0)
    scale = 1.0 / (t + 1.0)

    W0 = None
    Wbar0 = None
    if log.W0 is not None:
        w = np.zeros(n) if w is None else as_vector(w, "w", n)
        W0 = np.column_stack([log.W0, w])
        if cov.Wbar0 is not None:
            Wbar0 = keep * cov.Wbar0 + scale * np.outer(w, d)

    new_log = DataLog(
        np.column_stack([log.X0, x]),
        np.column_stack([log.U0, u]),
        np.column_stack([log.X1, x_next]),
        W0,
    )
    new_cov = CovarianceData(
        keep * cov.Ubar0 + scale * np.outer(u, d),
        keep * cov.Xbar0 + scale * np.outer(x, d),
        keep * cov.Xbar1 + scale * np.outer(x_next, d),
        t + 1,
        Wbar0,
    )
    return new_log, new_cov


def pe_check(cov, tol=PE_TOLERANCE):
    """
    Persistent-excitation test on Λ.

    Returns
    -------
    tuple of (bool, float)
        ``σ_min(Λ) > tol`` and γ = sqrt(σ_min(Λ)).

    Example
    -------
    >>> pe_check(CovarianceData(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
    ...                         np.zeros((1, 2)), 1))
    (True, 1.0)
    """
    if cov.t == 0:
        return False, 0.0
    sigma = min_eigenvalue(cov.Lambda)
    return bool(sigma > tol), float(np.sqrt(max(sigma, 0.0)))


def covariance_solve(Lambda, rhs):
    """
    Solve Λ X = rhs.

    Uses a Cholesky factorisation and falls back to an eigenvalue-floored
    pseudo-inverse when Λ is numerically indefinite.
    """
    Lambda = symmetrize(as_matrix(Lambda, "Lambda"))
    try:
        factor = linalg.cho_factor(Lambda, lower=True, check_finite=False)
        return linalg.cho_solve(factor, rhs, check_finite=False)
    except linalg.LinAlgError:
        logger.debug("Cholesky of Lambda failed, using floored eigen-solve")
        rhs = np.asarray(rhs, dtype=float)
        vals, vecs = np.linalg.eigh(Lambda)
        inv_vals = np.where(vals > EIGEN_FLOOR, 1.0 / np.maximum(vals, EIGEN_FLOOR), 0.0)
        inv_vals = inv_vals.reshape(-1, *([1] * (rhs.ndim - 1)))
        return vecs @ (inv_vals * (vecs.T @ rhs))


@requires_excitation()
def ls_identify(cov):
    """
    Least-squares estimate (Â, B̂) from the covariances.

    Computes [B̂, Â] = X̄₁ Λ⁻¹, which equals X₁ D₀† when the data are
    persistently exciting.

    Raises
    ------
    ExcitationError
        If the data are not persistently exciting.
    """
    BA = covariance_solve(cov.Lambda, cov.Xbar1.T).T
    m = cov.m
    return LtiSystem(BA[:, m:], BA[:, :m])


def snr_diagnostics(log, cov, noise_bound=None):
    """
    Compute γ_t, δ_t, SNR_t and the input excitation levels.

    δ_t = sqrt(‖(1/t) W0 W0ᵀ‖) when the log carries true noises, otherwise
    ``noise_bound``.

    Raises
    ------
    ConfigError
        If the log has no noises and no ``noise_bound`` was given.
    """
    _, gamma = pe_check(cov)
    if log.W0 is not None and log.t > 0:
        delta = float(np.sqrt(np.linalg.norm(log.W0 @ log.W0.T / log.t, 2)))
    elif noise_bound is not None:
        delta = float(noise_bound)
    else:
        raise ConfigError("noise level unknown: the log has no W0 and no noise_bound was set")
    snr = float("inf") if delta == 0.0 else gamma / delta
    if cov.t > 0:
        sigma_u = float(np.linalg.svd(cov.Ubar0, compute_uv=False)[-1])
    else:
        sigma_u = 0.0
    if log.t >= log.m:
        sigma_u_raw = float(np.linalg.svd(log.U0, compute_uv=False)[-1])
    else:
        sigma_u_raw = 0.0
    return DataDiagnostics(gamma, delta, snr, sigma_u, sigma_u_raw, log.t)


def collect_trajectory(sys, noise, steps, rng=None, x0=None, record_noise=True):
    """
    Excite ``sys`` with Gaussian inputs for ``steps`` transitions.

    Inputs are drawn with the noise model's pre-collection level and process
    noise with its process level.

    Parameters
    ----------
    sys : LtiSystem
    noise : NoiseModel
    steps : int
        Number of transitions T.
    rng : numpy.random.Generator, optional
        Defaults to ``noise.make_rng()``.
    x0 : array_like, optional
        Initial state. Zero when omitted.

    Returns
    -------
    tuple of (DataLog, CovarianceData, numpy.ndarray)
        The data, its covariances and the final state x_T.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    rng = noise.make_rng() if rng is None else rng
    x = np.zeros(sys.n) if x0 is None else as_vector(x0, "x0", sys.n)
    log = DataLog.empty(sys.n, sys.m, record_noise)
    cov = CovarianceData.empty(sys.n, sys.m, record_noise)
    for _ in range(steps):
        u = noise.precollection(rng, sys.m)
        w = noise.process(rng, sys.n)
        x_next = simulate_step(sys, x, u, w)
        log, cov = append_sample(log, cov, x, u, x_next, w)
        x = x_next
    logger.debug(f"Collected {steps} samples, PE={pe_check(cov)[0]}")
    return log, cov, x


def _columns(n, m):
    return ([f"x{i}" for i in range(1, n + 1)]
            + [f"u{i}" for i in range(1, m + 1)]
            + [f"x{i}'" for i in range(1, n + 1)])


def save_csv(log, path):
    """Write (X0, U0, X1) one sample per row with header ``x1..xn,u1..um,x1'..xn'``."""
    frame = pd.DataFrame(
        np.vstack([log.X0, log.U0, log.X1]).T,
        columns=_columns(log.n, log.m),
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Saved {log.t} samples to {path}")


def load_csv(path):
    """
    Read a log written by ``save_csv``.

    Raises
    ------
    ConfigError
        If the header does not follow ``x1..xn,u1..um,x1'..xn'``.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    header = list(frame.columns)
    n = sum(1 for c in header if c.startswith("x") and not c.endswith("'"))
    m = sum(1 for c in header if c.startswith("u"))
    if n == 0 or header != _columns(n, m):
        raise ConfigError(f"unexpected CSV header {header}", path=path)
    data = frame.to_numpy(dtype=float).T
    return DataLog(data[:n], data[n:n + m], data[n + m:])
