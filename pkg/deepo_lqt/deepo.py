# -*- coding: utf-8 -*-
"""
Policy Optimization

Offline projected gradient descent on the covariance-parameterized tracking
cost, its model-space equivalent step, and the online single-trajectory
variant that interleaves control, data collection and one gradient step per
time step. Closed-loop rollouts on the true system evaluate the resulting
policies.

Exposed Methods:
    offline_step, offline_solve, offline_step_model_equiv, find_max_step,
    stabilizing_start, certainty_equivalent_policy, online_run, tracking_rollout
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import linalg

from .data_log import (
    CovarianceData,
    DataLog,
    append_sample,
    collect_trajectory,
    ls_identify,
    pe_check,
    snr_diagnostics,
)
from .exceptions import DeePOError, DivergenceError, InfeasiblePolicyError, ReferenceRangeError
from .lqt_cost import data_cost_cache, model_cost_cache, optimal_cost
from .lti_core import (
    STABILITY_MARGIN,
    DecoupledPolicy,
    NoiseModel,
    ReferenceKind,
    TrackingPolicy,
    ensure_stable,
    optimal_gains,
    preview_tracking_state,
    reference_window,
    simulate_step,
    spectral_radius,
    tracking_states,
)
from .policy_param import (
    CovariancePolicy,
    kv_to_l,
    l_to_kv,
    projection,
    q_factor,
    scaling_matrix,
    theta_to_xi,
    xi_to_theta,
)
from .utils import as_vector, symmetrize

logger = logging.getLogger("deepo_lqt")

PRECONDITIONERS = ("none", "natural")


class SolverStatus(Enum):
    """Why an offline solve stopped."""
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    INFEASIBLE_STEP = "infeasible_step"


class OnlineStatus(Enum):
    COMPLETED = "completed"
    ABORTED = "aborted"


class EventKind(Enum):
    """Non-routine outcomes of an online step."""
    SKIPPED_PE = "skipped_pe"
    INFEASIBLE = "infeasible"
    BACKTRACKED = "backtracked"
    REJECTED_STEP = "rejected_step"
    ABORTED = "aborted"


@dataclass(frozen=True)
class SolverConfig:
    """
    Step-size and stopping parameters shared by the offline and online solvers.

    Parameters
    ----------
    eta : float
        Base step size η (> 0).
    eta_h_factor : float
        Multiplier η_H ≥ 1 applied to the H-block of each step.
    max_iters : int
        Offline iteration cap.
    grad_tol : float
        Offline stop when ‖Π∇_ξC‖_F < grad_tol.
    normalize_step : bool
        Use η/‖M‖ instead of η. Only applies to the plain projected gradient.
    preview_horizon : int
        N; the online preview uses N+1 references.
    blowup_factor : float
        Online abort once ‖x_t‖ > blowup_factor·(1 + z̄).
    margin : float
        Spectral-radius feasibility margin.
    preconditioner : str
        ``none`` steps along Π∇_ξC. ``natural`` steps along the data-space
        lift of 2S⁻¹[E, F] with S = R + B̂ᵀP B̂, which removes the scaling
        matrix M and the state covariance Φ from the model image of the step.
    max_backtracks : int
        Online step-size halvings tried before a step is rejected.
    """
    eta: float = 0.01
    eta_h_factor: float = 1.0
    max_iters: int = 1000
    grad_tol: float = 1e-10
    normalize_step: bool = False
    preview_horizon: int = 10
    blowup_factor: float = 1e6
    margin: float = STABILITY_MARGIN
    preconditioner: str = "none"
    max_backtracks: int = 20

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.eta_h_factor >= 1:
            raise ValueError(f"eta_h_factor must be >= 1, got {self.eta_h_factor}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.grad_tol < 0 or self.preview_horizon < 0 or self.blowup_factor <= 0:
            raise ValueError("grad_tol and preview_horizon must be >= 0, blowup_factor > 0")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, "
                             f"got {self.preconditioner!r}")
        if self.max_backtracks < 0:
            raise ValueError(f"max_backtracks must be >= 0, got {self.max_backtracks}")

    def updated(self, **changes):
        return replace(self, **changes)

    def step_scales(self, n, scaling=None):
        """Per-column step sizes for a [V, H] or [K, L] shaped gradient."""
        eta = self.eta
        if self.normalize_step and scaling is not None and self.preconditioner == "none":
            eta = eta / scaling.norm
        return np.concatenate([np.full(n, eta), np.full(n, eta * self.eta_h_factor)])


@dataclass(frozen=True, eq=False)
class StepGeometry:
    """
    Covariance-dependent pieces of a data-space step.

    ``lift`` is ΠŪ₀ᵀM⁻¹: it maps a model-space step to the ξ step with that
    image, so Ū₀·lift = I and X̄₀·lift = 0. ``B_hat`` = X̄₁·lift is the input
    matrix of the least-squares model.
    """
    pi: np.ndarray
    scales: np.ndarray
    lift: Optional[np.ndarray] = None
    B_hat: Optional[np.ndarray] = None

    @classmethod
    def build(cls, cov, cfg, scaling=None):
        pi = projection(cov)
        if cfg.preconditioner == "none":
            if scaling is None and cfg.normalize_step:
                scaling = scaling_matrix(cov)
            return cls(pi, cfg.step_scales(cov.n, scaling))
        if scaling is None:
            scaling = scaling_matrix(cov)
        factor = linalg.cho_factor(scaling.M, lower=True)
        lift = linalg.cho_solve(factor, cov.Ubar0 @ pi).T
        return cls(pi, cfg.step_scales(cov.n), lift, cov.Xbar1 @ lift)

    def direction(self, weights, cache):
        """Unscaled step at the cost cache of the current iterate."""
        if self.lift is None:
            return self.pi @ cache.gradient
        S = symmetrize(weights.R + self.B_hat.T @ cache.P_V @ self.B_hat)
        model_step = self.lift.T @ np.hstack([cache.E_V, cache.F_xi])
        return self.lift @ (2.0 * linalg.solve(S, model_step, assume_a="pos"))

    def step(self, weights, cache):
        return self.direction(weights, cache) * self.scales


@dataclass(frozen=True, eq=False)
class IterationRecord:
    k: int
    cost: float
    grad_norm: float
    residual: float
    rho: float
    K: np.ndarray
    L: np.ndarray


@dataclass(eq=False)
class SolverTrace:
    """
    Iterates of an offline solve, starting with the initial policy at k = 0.
    """
    records: List[IterationRecord] = field(default_factory=list)
    status: Optional[SolverStatus] = None
    xi: Optional[CovariancePolicy] = None

    @property
    def policy(self):
        """Final (K, L)."""
        last = self.records[-1]
        return DecoupledPolicy(last.K, last.L)

    @property
    def costs(self):
        return np.array([r.cost for r in self.records])

    @property
    def iterations(self):
        return len(self.records) - 1

    def to_frame(self, reference_cost=None, reference_policy=None):
        """
        One row per iterate.

        With ``reference_cost`` a ``gap`` column C(ξᵏ) − C_ref is added; with
        ``reference_policy`` a ``gain_error`` column ‖θᵏ − θ_ref‖_F/‖θ_ref‖_F.
        """
        rows = []
        for r in self.records:
            row = {
                "k": r.k,
                "cost": r.cost,
                "grad_norm": r.grad_norm,
                "residual": r.residual,
                "rho": r.rho,
            }
            if reference_cost is not None:
                row["gap"] = r.cost - reference_cost
            if reference_policy is not None:
                theta = np.hstack([r.K, r.L])
                ref = reference_policy.theta
                row["gain_error"] = float(np.linalg.norm(theta - ref) / np.linalg.norm(ref))
            row.update(_gain_columns(K=r.K, L=r.L))
            rows.append(row)
        return pd.DataFrame(rows)


def _gain_columns(**gains):
    cols = {}
    for name, mat in gains.items():
        for (i, j), value in np.ndenumerate(mat):
            cols[f"{name}_{i + 1}_{j + 1}"] = value
    return cols


def offline_step(cov, weights, xi, cfg, geometry=None):
    """
    One offline step ξ⁺ = ξ − Δ·diag(η, η·η_H).

    Δ is Π∇_ξC(ξ) for the plain step and the lifted Gauss-Newton direction
    when ``cfg.preconditioner`` is ``natural``.

    Returns
    -------
    tuple of (CovariancePolicy, DataCostCache)
        The new iterate and the cost cache at the old one.
    """
    if geometry is None:
        geometry = StepGeometry.build(cov, cfg)
    cache = data_cost_cache(cov, weights, xi, cfg.margin)
    return CovariancePolicy.from_xi(xi.xi - geometry.step(weights, cache)), cache


def offline_solve(cov, weights, theta0, cfg=None):
    """
    Offline DeePO: projected gradient descent on C(ξ) from θ₀, or its
    lifted Gauss-Newton variant with ``cfg.preconditioner = "natural"``.

    Parameters
    ----------
    cov : CovarianceData
        Persistently exciting covariances of the offline data.
    weights : CostWeights
    theta0 : DecoupledPolicy
        Initial policy; must stabilize the data-based closed loop.
    cfg : SolverConfig, optional

    Returns
    -------
    SolverTrace
        Status is ``CONVERGED`` when ‖Π∇‖_F dropped below ``grad_tol``,
        ``MAX_ITERS`` on the cap and ``INFEASIBLE_STEP`` when a step left the
        stabilizing set (the last record is the final feasible iterate).

    Raises
    ------
    ExcitationError
        If the data are not persistently exciting.
    InfeasiblePolicyError
        If θ₀ is not stabilizing on the data.
    """
    cfg = cfg or SolverConfig()
    geometry = StepGeometry.build(cov, cfg)
    xi = theta_to_xi(theta0.K, theta0.L, cov)
    cache = data_cost_cache(cov, weights, xi, cfg.margin)
    trace = SolverTrace()
    increases = 0
    for k in range(cfg.max_iters + 1):
        grad_norm = float(np.linalg.norm(geometry.pi @ cache.gradient))
        K, L = xi_to_theta(xi, cov)
        trace.records.append(
            IterationRecord(k, cache.cost, grad_norm, cache.residual, cache.rho, K, L)
        )
        logger.debug(f"offline k={k} cost={cache.cost:.12g} |Pi grad|={grad_norm:.3e}")
        if grad_norm < cfg.grad_tol:
            trace.status = SolverStatus.CONVERGED
            break
        if k == cfg.max_iters:
            trace.status = SolverStatus.MAX_ITERS
            break
        candidate = CovariancePolicy.from_xi(xi.xi - geometry.step(weights, cache))
        try:
            new_cache = data_cost_cache(cov, weights, candidate, cfg.margin)
        except InfeasiblePolicyError as e:
            logger.warning(f"offline step {k + 1} left the feasible set ({e}); step size too large")
            trace.status = SolverStatus.INFEASIBLE_STEP
            break
        if new_cache.cost > cache.cost * (1.0 + 1e-12):
            increases += 1
            if increases == 1:
                logger.warning(f"offline cost increased at k={k + 1}: "
                               f"{cache.cost:.12g} -> {new_cache.cost:.12g}")
        xi, cache = candidate, new_cache
    trace.xi = xi
    logger.info(f"Offline solve stopped after {trace.iterations} iterations: {trace.status.value}")
    return trace


def offline_step_model_equiv(cov, weights, theta, cfg=None):
    """
    Model-space image of one offline step on the least-squares model of ``cov``.

    The plain step is θ⁺ = θ − M∇_θĈ(θ)·diag(η, η·η_H) with M the scaling
    matrix; the ``natural`` step is θ⁺ = θ − 2S⁻¹[E_K, F_θ]·diag(η, η·η_H)
    with S = R + B̂ᵀP_K B̂. Either matches ``xi_to_theta`` of one data-space
    step.
    """
    cfg = cfg or SolverConfig()
    sys_hat = ls_identify(cov)
    cache = model_cost_cache(sys_hat, weights, theta, cfg.margin)
    if cfg.preconditioner == "natural":
        S = symmetrize(weights.R + sys_hat.B.T @ cache.P_K @ sys_hat.B)
        direction = 2.0 * linalg.solve(S, np.hstack([cache.E_K, cache.F_theta]), assume_a="pos")
        scales = cfg.step_scales(cov.n)
    else:
        scaling = scaling_matrix(cov)
        direction = scaling.M @ cache.gradient
        scales = cfg.step_scales(cov.n, scaling)
    return DecoupledPolicy.from_theta(theta.theta - direction * scales)


def find_max_step(cov, weights, theta0, cfg=None, trial_steps=20, shrink=0.5, max_halvings=40):
    """
    Largest η = cfg.eta·shrinkᵏ whose first ``trial_steps`` offline steps stay
    feasible with non-increasing cost.

    Raises
    ------
    DivergenceError
        If no step size passes within ``max_halvings`` reductions.
    """
    cfg = cfg or SolverConfig()
    eta = cfg.eta
    for _ in range(max_halvings + 1):
        trial = cfg.updated(eta=eta, max_iters=trial_steps, grad_tol=0.0)
        trace = offline_solve(cov, weights, theta0, trial)
        costs = trace.costs
        monotone = np.all(np.diff(costs) <= 1e-12 * np.abs(costs[:-1]))
        if trace.status is not SolverStatus.INFEASIBLE_STEP and monotone:
            logger.info(f"Step size search settled on eta={eta:.6g}")
            return eta
        eta *= shrink
    raise DivergenceError(f"no admissible step size down to eta={eta:.3e}", iterations=max_halvings)


def stabilizing_start(cov, weights, margin=STABILITY_MARGIN):
    """
    Initial policy for an offline solve on ``cov``.

    The zero policy when the least-squares model is open-loop stable;
    otherwise the certainty-equivalent feedback gain with L = 0, which
    stabilizes the data-based closed loop.

    Returns
    -------
    tuple of (DecoupledPolicy, bool)
        The policy and whether the fallback was used.
    """
    sys_hat = ls_identify(cov)
    zero = DecoupledPolicy.zeros(sys_hat.n, sys_hat.m)
    rho = spectral_radius(sys_hat.A)
    if rho < 1.0 - margin:
        return zero, False
    logger.warning(f"least-squares model is open-loop unstable (rho={rho:.6g}); "
                   "starting from the certainty-equivalent feedback gain")
    _, ce = optimal_gains(sys_hat, weights)
    return DecoupledPolicy(ce.K, np.zeros_like(ce.K)), True


def certainty_equivalent_policy(cov, weights):
    """
    Certainty-equivalence baseline: Riccati gains of the least-squares model.

    Returns
    -------
    tuple of (TrackingPolicy, DecoupledPolicy)
    """
    return optimal_gains(ls_identify(cov), weights)


@dataclass(eq=False)
class OnlineState:
    """
    Mutable state of an online run.

    ``V_prime`` is the most recent accepted V at the covariance it was
    computed on; ``cov_prime`` is that covariance. The data-based closed loop
    used for the reference preview is ``cov_prime.Xbar1 @ V_prime``.
    """
    K: np.ndarray
    K_v: np.ndarray
    log: DataLog
    cov: CovarianceData
    x: np.ndarray
    t: int
    noise: NoiseModel
    rng: np.random.Generator
    V_prime: Optional[np.ndarray] = None
    cov_prime: Optional[CovarianceData] = None

    @classmethod
    def initialize(cls, sys, policy, noise, precollect=9, x0=None):
        """
        Pre-collect ``precollect`` Gaussian-input samples and arm the state
        with ``policy``.

        The run starts at t = ``precollect`` from the state the pre-collection
        ended in.
        """
        rng = noise.make_rng()
        log, cov, x = collect_trajectory(sys, noise, precollect, rng, x0)
        state = cls(policy.K.copy(), policy.K_v.copy(), log, cov, x, precollect, noise, rng)
        if pe_check(cov)[0]:
            state.V_prime = theta_to_xi(policy.K, np.zeros_like(policy.K), cov).V
            state.cov_prime = cov
        else:
            logger.warning(f"pre-collected data (t={precollect}) are not persistently exciting; "
                           "updates wait for excitation")
        return state

    @property
    def policy(self):
        return TrackingPolicy(self.K, self.K_v)

    def data_closed_loop(self):
        """X̄₁V′ at the covariance V′ was formed on; zero before the first PE step."""
        if self.V_prime is None:
            return np.zeros((self.x.shape[0], self.x.shape[0]))
        return self.cov_prime.Xbar1 @ self.V_prime


@dataclass(frozen=True)
class OnlineEvent:
    t: int
    kind: EventKind
    message: str


@dataclass(eq=False)
class OnlineTrace:
    """Per-step rows of an online run plus its events and final status."""
    rows: List[dict] = field(default_factory=list)
    events: List[OnlineEvent] = field(default_factory=list)
    status: OnlineStatus = OnlineStatus.COMPLETED
    optimal_cost: float = float("nan")

    def to_frame(self):
        return pd.DataFrame(self.rows)

    @property
    def gaps(self):
        return np.array([r["gap"] for r in self.rows])

    @property
    def max_state_norm(self):
        return max((r["norm_x"] for r in self.rows), default=0.0)

    def count(self, kind):
        return sum(1 for e in self.events if e.kind is kind)


def _applied_gap(sys, weights, K, K_v, c_star, margin=STABILITY_MARGIN):
    """
    Gap of the decoupled policy that (K, K_v) realizes on the true system.

    Infinite when ρ(A + BK) ≥ 1 − margin, the same bound the cost enforces.
    """
    A_cl = sys.closed_loop(K)
    if spectral_radius(A_cl) >= 1.0 - margin:
        return float("inf"), np.full_like(K, np.nan)
    L = kv_to_l(K_v, A_cl, weights.Q)
    cache = model_cost_cache(sys, weights, DecoupledPolicy(K, L), margin)
    return cache.cost - c_star, L


def online_run(sys, weights, ref, state, cfg, horizon, noise_bound=None):
    """
    Online DeePO for reference tracking on a single trajectory.

    Each step previews N+1 references through the data-based closed loop to
    get v_t, applies u_t = K_t x_t + K_v,t v_t + e_t to ``sys``, appends the
    transition, re-parameterizes the gains at the new covariance, takes one
    projected gradient step and converts back to (K, K_v). Steps on data that
    are not persistently exciting, or whose current policy is infeasible on the
    new data, keep the gains. A step that leaves the feasible set or raises
    C_t is halved until it does neither and rejected after
    ``cfg.max_backtracks`` halvings.

    Parameters
    ----------
    sys : LtiSystem
        True system; only used to simulate and to score the gap.
    weights : CostWeights
    ref : ReferenceSignal
    state : OnlineState
        Advanced in place.
    cfg : SolverConfig
    horizon : int
        Number of online steps.
    noise_bound : float, optional
        δ for the SNR column when the log carries no true noises.

    Returns
    -------
    OnlineTrace

    Raises
    ------
    ReferenceRangeError
        If a table reference ends before the last preview window.
    """
    n, m = sys.n, sys.m
    if ref.kind is ReferenceKind.TABLE:
        needed = state.t + horizon + cfg.preview_horizon
        if ref.table.shape[0] < needed:
            raise ReferenceRangeError(
                f"reference table has {ref.table.shape[0]} rows, online run needs {needed}"
            )
    Q, R = weights.Q, weights.R
    factor = q_factor(Q)
    c_star = optimal_cost(sys, weights)
    z_bar = ref.sup_norm(state.t + horizon + cfg.preview_horizon)
    blowup = cfg.blowup_factor * (1.0 + z_bar)
    trace = OnlineTrace(optimal_cost=c_star)
    total_cost = 0.0
    noise = state.noise

    for step in range(horizon):
        t = state.t
        x = state.x
        refs = reference_window(ref, t, cfg.preview_horizon + 1)
        z = refs[0]
        try:
            v = preview_tracking_state(state.data_closed_loop(), Q, refs)
        except DeePOError as e:
            trace.events.append(OnlineEvent(t, EventKind.ABORTED, f"preview failed: {e}"))
            trace.status = OnlineStatus.ABORTED
            logger.error(f"online run aborted at t={t}: preview failed: {e}")
            break

        K, K_v = state.K, state.K_v
        e_t = noise.exploration(state.rng, m)
        w_t = noise.process(state.rng, n)
        u = K @ x + K_v @ v + e_t
        x_next = simulate_step(sys, x, u, w_t)
        deviation = x - z
        total_cost += float(deviation @ Q @ deviation + u @ R @ u)
        gap, L_true = _applied_gap(sys, weights, K, K_v, c_star, cfg.margin)

        cov_old = state.cov
        A_cl_old = state.data_closed_loop()
        state.log, state.cov = append_sample(state.log, cov_old, x, u, x_next, w_t)
        state.x = x_next
        state.t = t + 1
        cov = state.cov

        pe_ok, gamma = pe_check(cov)
        sigma_min_M = float("nan")
        residual = float("nan")
        updated = False
        if not pe_ok:
            message = f"sigma_min(Lambda)={gamma ** 2:.3e}"
            trace.events.append(OnlineEvent(t, EventKind.SKIPPED_PE, message))
            logger.warning(f"t={t}: data not persistently exciting, update skipped")
        else:
            scaling = scaling_matrix(cov)
            sigma_min_M = scaling.sigma_min
            updated, residual = _online_update(state, weights, cfg, cov, scaling, A_cl_old,
                                               factor, trace, t)

        diag = snr_diagnostics(state.log, cov, noise_bound)
        row = {
            "t": t,
            "cost": gap + c_star,
            "gap": gap,
            "norm_x": float(np.linalg.norm(x)),
            "snr": diag.snr,
            "gamma": gamma,
            "gamma4": gamma ** 4,
            "sigma_min_M": sigma_min_M,
            "sigma_min_U": diag.sigma_min_U,
            "sigma_min_U_raw": diag.sigma_min_U_raw,
            "running_cost": total_cost / (step + 1),
            "residual": residual,
            "updated": updated,
        }
        row.update({f"x{i + 1}": value for i, value in enumerate(x)})
        row.update({f"z{i + 1}": value for i, value in enumerate(z)})
        row.update({f"u{i + 1}": value for i, value in enumerate(u)})
        row.update(_gain_columns(K=K, K_v=K_v, L=L_true))
        trace.rows.append(row)

        norm_next = float(np.linalg.norm(x_next))
        if not math.isfinite(norm_next) or norm_next > blowup:
            message = f"state norm {norm_next:.3e} exceeded blow-up bound {blowup:.3e}"
            trace.events.append(OnlineEvent(t, EventKind.ABORTED, message))
            trace.status = OnlineStatus.ABORTED
            logger.error(f"online run aborted at t={t}: {message}")
            break

    logger.info(f"Online run finished at t={state.t} with status {trace.status.value}")
    return trace


def _online_update(state, weights, cfg, cov, scaling, A_cl_old, factor, trace, t):
    """
    Re-parameterize at ``cov``, take one step and store the new gains.

    The step is halved up to ``cfg.max_backtracks`` times until it stays
    feasible without raising C_t; a step that never does is rejected.
    """
    Q = weights.Q
    if state.V_prime is None:
        A_cl_old = cov.Xbar1 @ theta_to_xi(state.K, np.zeros_like(state.K), cov).V
    L = kv_to_l(state.K_v, A_cl_old, Q)
    xi = theta_to_xi(state.K, L, cov)
    try:
        cache = data_cost_cache(cov, weights, xi, cfg.margin)
    except InfeasiblePolicyError as e:
        trace.events.append(OnlineEvent(t, EventKind.INFEASIBLE, str(e)))
        logger.warning(f"t={t}: current policy infeasible on the data, update skipped")
        state.V_prime, state.cov_prime = xi.V, cov
        return False, float("nan")

    step = StepGeometry.build(cov, cfg, scaling).step(weights, cache)
    for halvings in range(cfg.max_backtracks + 1):
        candidate = CovariancePolicy.from_xi(xi.xi - step)
        try:
            new_cache = data_cost_cache(cov, weights, candidate, cfg.margin)
        except InfeasiblePolicyError as e:
            reason = str(e)
        else:
            if new_cache.cost <= cache.cost * (1.0 + 1e-12):
                break
            reason = f"cost increased {cache.cost:.6g} -> {new_cache.cost:.6g}"
        step = 0.5 * step
    else:
        trace.events.append(OnlineEvent(t, EventKind.REJECTED_STEP, reason))
        logger.warning(f"t={t}: step rejected after {cfg.max_backtracks} halvings: {reason}")
        state.V_prime, state.cov_prime = xi.V, cov
        return False, float("nan")
    if halvings:
        trace.events.append(OnlineEvent(t, EventKind.BACKTRACKED, f"step halved {halvings}x"))
        logger.debug(f"t={t}: step halved {halvings} times")

    K_new, L_new = xi_to_theta(candidate, cov)
    A_cl_new = candidate.closed_loop(cov)
    state.K = K_new
    state.K_v = l_to_kv(L_new, A_cl_new, Q, factor)
    state.V_prime, state.cov_prime = candidate.V, cov
    return True, new_cache.residual


@dataclass(frozen=True, eq=False)
class RolloutResult:
    """
    Outcome of a closed-loop rollout.

    ``cost`` is (1/T)Σ[(x−z)ᵀQ(x−z) + uᵀRu]; ``tracking_error`` the mean of
    ‖x_t − z_t‖.
    """
    cost: float
    tracking_error: float
    frame: pd.DataFrame


def tracking_rollout(sys, weights, policy, ref, noise, steps, x0=None, rng=None, tail=None):
    """
    Deploy u_t = K x_t + K_v v_t on the true system for ``steps`` steps.

    v_t is the model-based tracking state of the closed loop A + BK, computed
    over the horizon plus ``tail`` extra references (enough for ρᵗᵃⁱˡ to be
    negligible when omitted).

    Raises
    ------
    InstabilityError
        If A + BK is not Schur stable.

    Example
    -------
    >>> from deepo_lqt.lti_core import CostWeights, LtiSystem, NoiseModel, ReferenceSignal
    >>> sys = LtiSystem([[0.0]], [[1.0]])
    >>> policy = TrackingPolicy([[0.0]], [[0.5]])
    >>> result = tracking_rollout(sys, CostWeights([[1.0]], [[1.0]]), policy,
    ...                           ReferenceSignal.constant([1.0]), NoiseModel(), 20, x0=[0.5])
    >>> result.cost
    0.5
    """
    n = sys.n
    Q, R = weights.Q, weights.R
    K, K_v = policy.K, policy.K_v
    A_cl = sys.closed_loop(K)
    rho = ensure_stable(A_cl, "rollout closed loop")
    if tail is None:
        tail = 1 if rho < 1e-12 else min(10_000, int(math.ceil(math.log(1e-16) / math.log(rho))))
    if ref.kind is ReferenceKind.TABLE:
        tail = max(0, min(tail, ref.table.shape[0] - steps))
    refs = reference_window(ref, 0, steps + tail)
    vs = tracking_states(A_cl, Q, refs)
    rng = noise.make_rng() if rng is None else rng
    x = np.zeros(n) if x0 is None else as_vector(x0, "x0", n)

    states, inputs, stage = [], [], []
    for t in range(steps):
        u = K @ x + K_v @ vs[t]
        deviation = x - refs[t]
        stage.append(float(deviation @ Q @ deviation + u @ R @ u))
        states.append(x)
        inputs.append(u)
        x = simulate_step(sys, x, u, noise.process(rng, n))

    states = np.array(states)
    inputs = np.array(inputs)
    frame = pd.DataFrame({"t": np.arange(steps)})
    for i in range(n):
        frame[f"x{i + 1}"] = states[:, i]
        frame[f"z{i + 1}"] = refs[:steps, i]
    for i in range(sys.m):
        frame[f"u{i + 1}"] = inputs[:, i]
    frame["stage_cost"] = stage
    errors = np.linalg.norm(states - refs[:steps], axis=1)
    return RolloutResult(float(np.mean(stage)), float(np.mean(errors)), frame)

