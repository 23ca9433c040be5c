# -*- coding: utf-8 -*-
import numpy as np
import pytest

from deepo_lqt.data_log import collect_trajectory, ls_identify
from deepo_lqt.deepo import (
    EventKind,
    OnlineState,
    OnlineStatus,
    SolverConfig,
    SolverStatus,
    _applied_gap,
    certainty_equivalent_policy,
    find_max_step,
    offline_solve,
    offline_step,
    offline_step_model_equiv,
    online_run,
    stabilizing_start,
    tracking_rollout,
)
from deepo_lqt.exceptions import (
    ExcitationError,
    InfeasiblePolicyError,
    InstabilityError,
    ReferenceRangeError,
)
from deepo_lqt.lqt_cost import model_cost
from deepo_lqt.lti_core import (
    ActuationMode,
    CostWeights,
    DecoupledPolicy,
    LtiSystem,
    NoiseModel,
    ReferenceSignal,
    TrackingPolicy,
    benchmark_system,
    benchmark_weights,
    optimal_gains,
    spectral_radius,
)
from deepo_lqt.policy_param import theta_to_xi, xi_to_theta
from deepo_lqt.settings import ExperimentConfig
from tests.conftest import EXAMPLES_DIR


def _relative_gain_error(theta, reference):
    return np.linalg.norm(theta.theta - reference.theta) / np.linalg.norm(reference.theta)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eta=0.0)
    with pytest.raises(ValueError):
        SolverConfig(eta_h_factor=0.5)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="newton")
    with pytest.raises(ValueError):
        SolverConfig(max_backtracks=-1)
    assert SolverConfig().updated(eta=0.5).eta == 0.5


def test_step_scales_split_blocks():
    cfg = SolverConfig(eta=0.01, eta_h_factor=5.0)
    np.testing.assert_allclose(cfg.step_scales(2), [0.01, 0.01, 0.05, 0.05])


@pytest.mark.unit
def test_scalar_offline_solve_reaches_riccati_gains(scalar_sys, scalar_weights, scalar_cov):
    theta0 = DecoupledPolicy.zeros(1, 1)
    cfg = SolverConfig(eta=0.1, max_iters=2000, grad_tol=1e-12)
    eta = find_max_step(scalar_cov, scalar_weights, theta0, cfg)
    trace = offline_solve(scalar_cov, scalar_weights, theta0, cfg.updated(eta=eta))

    assert trace.status is SolverStatus.CONVERGED
    K, L = trace.policy
    assert K[0, 0] == pytest.approx(0.0, abs=1e-8)
    assert L[0, 0] == pytest.approx(0.5, abs=1e-8)
    assert trace.costs[-1] == pytest.approx(1.5, abs=1e-12)
    assert trace.costs[0] == pytest.approx(2.0, abs=1e-12)


def test_offline_costs_are_monotone_and_feasible(bench_full, bench_data):
    _, weights = bench_full
    _, cov = bench_data
    theta0 = DecoupledPolicy.zeros(4, 4)
    cfg = SolverConfig(max_iters=300)
    trace = offline_solve(cov, weights, theta0, cfg.updated(eta=find_max_step(cov, weights,
                                                                              theta0, cfg)))

    costs = trace.costs
    assert trace.status in (SolverStatus.CONVERGED, SolverStatus.MAX_ITERS)
    assert np.all(np.diff(costs) <= 1e-12 * costs[:-1])
    frame = trace.to_frame()
    assert frame["residual"].max() < 1e-8
    assert frame["rho"].max() < 1.0
    assert {"k", "cost", "grad_norm", "K_1_1", "L_4_4"} <= set(frame.columns)


def test_data_step_matches_scaled_model_step(bench_full, bench_data):
    """One data-space step maps to theta - M grad(C_hat)·diag(eta, eta·eta_h) on the estimate."""
    _, weights = bench_full
    _, cov = bench_data
    theta0 = DecoupledPolicy.zeros(4, 4)
    cfg = SolverConfig(eta_h_factor=5.0)
    cfg = cfg.updated(eta=find_max_step(cov, weights, theta0, cfg))
    xi = theta_to_xi(theta0.K, theta0.L, cov)
    for _ in range(50):
        theta = xi_to_theta(xi, cov)
        xi, _ = offline_step(cov, weights, xi, cfg)
        via_model = offline_step_model_equiv(cov, weights, theta, cfg)
        via_data = xi_to_theta(xi, cov)
        scale = max(1.0, np.abs(via_model.theta).max())
        np.testing.assert_allclose(via_data.theta, via_model.theta, atol=1e-9 * scale)


def test_natural_data_step_matches_model_step(bench_full, bench_data):
    """The lifted data step maps to theta - 2 S^-1 [E_K, F_theta]·diag(eta, eta·eta_h)."""
    _, weights = bench_full
    _, cov = bench_data
    cfg = SolverConfig(eta=0.01, eta_h_factor=5.0, preconditioner="natural")
    xi = theta_to_xi(np.zeros((4, 4)), np.zeros((4, 4)), cov)
    for _ in range(20):
        theta = xi_to_theta(xi, cov)
        xi, _ = offline_step(cov, weights, xi, cfg)
        via_model = offline_step_model_equiv(cov, weights, theta, cfg)
        via_data = xi_to_theta(xi, cov)
        scale = max(1.0, np.abs(via_model.theta).max())
        np.testing.assert_allclose(via_data.theta, via_model.theta, atol=1e-8 * scale)


@pytest.mark.parametrize("mode", [ActuationMode.FULL, ActuationMode.UNDER])
def test_natural_offline_solve_reaches_certainty_equivalence(mode):
    sys = benchmark_system(mode)
    weights = benchmark_weights(sys.m)
    _, cov, _ = collect_trajectory(sys, NoiseModel(0.1, 1.0, seed=2024, precollect_std=1.0), 9)
    theta0, _ = stabilizing_start(cov, weights)
    cfg = SolverConfig(eta=0.01, max_iters=5000, grad_tol=1e-10, preconditioner="natural")
    trace = offline_solve(cov, weights, theta0, cfg)
    _, ce = certainty_equivalent_policy(cov, weights)

    costs = trace.costs
    assert trace.status is SolverStatus.CONVERGED
    assert _relative_gain_error(trace.policy, ce) < 1e-6
    assert np.all(np.diff(costs) <= 1e-12 * costs[:-1])


def test_stabilizing_start_keeps_zero_gains_on_stable_data(bench_full, bench_data):
    _, weights = bench_full
    _, cov = bench_data
    theta0, fallback = stabilizing_start(cov, weights)
    assert not fallback
    assert not theta0.theta.any()


def test_stabilizing_start_on_unstable_data(scalar_weights):
    sys = LtiSystem([[1.2]], [[1.0]])
    noise = NoiseModel(process_std=0.0, exploration_std=0.0, seed=5, precollect_std=1.0)
    _, cov, _ = collect_trajectory(sys, noise, 4)
    with pytest.raises(InfeasiblePolicyError):
        offline_solve(cov, scalar_weights, DecoupledPolicy.zeros(1, 1))

    theta0, fallback = stabilizing_start(cov, scalar_weights)
    assert fallback
    assert theta0.L[0, 0] == 0.0
    assert spectral_radius(sys.closed_loop(theta0.K)) < 1.0
    trace = offline_solve(cov, scalar_weights, theta0,
                          SolverConfig(eta=0.1, max_iters=2000, preconditioner="natural"))
    _, ce = certainty_equivalent_policy(cov, scalar_weights)
    assert trace.status is SolverStatus.CONVERGED
    np.testing.assert_allclose(trace.policy.theta, ce.theta, atol=1e-8)


def test_offline_rejects_unstable_start(scalar_weights, scalar_cov):
    with pytest.raises(InfeasiblePolicyError):
        offline_solve(scalar_cov, scalar_weights, DecoupledPolicy([[1.5]], [[0.0]]))


def test_offline_requires_exciting_data(bench_full):
    sys, weights = bench_full
    _, cov, _ = collect_trajectory(sys, NoiseModel(0.1, 1.0, seed=4), 5)
    with pytest.raises(ExcitationError):
        offline_solve(cov, weights, DecoupledPolicy.zeros(4, 4))


def test_certainty_equivalence_on_exact_data(scalar_sys, scalar_weights, scalar_cov):
    tracking, decoupled = certainty_equivalent_policy(scalar_cov, scalar_weights)
    _, optimum = optimal_gains(scalar_sys, scalar_weights)
    np.testing.assert_allclose(decoupled.theta, optimum.theta, atol=1e-10)
    np.testing.assert_allclose(tracking.K_v, [[0.5]], atol=1e-10)


def test_convergence_frame_reports_gap_and_gain_error(scalar_weights, scalar_cov):
    trace = offline_solve(scalar_cov, scalar_weights, DecoupledPolicy.zeros(1, 1),
                          SolverConfig(eta=0.05, max_iters=5))
    _, reference = certainty_equivalent_policy(scalar_cov, scalar_weights)
    frame = trace.to_frame(reference_cost=1.5, reference_policy=reference)
    assert len(frame) == trace.iterations + 1 == 6
    assert frame["gap"].iloc[0] == pytest.approx(0.5, abs=1e-12)
    assert frame["gain_error"].iloc[0] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("mode", [ActuationMode.FULL, ActuationMode.UNDER])
@pytest.mark.parametrize("seed", range(10))
def test_offline_converges_to_certainty_equivalence(mode, seed):
    sys = benchmark_system(mode)
    weights = benchmark_weights(sys.m)
    _, cov, _ = collect_trajectory(sys, NoiseModel(0.1, 1.0, seed=seed), 9)
    theta0, _ = stabilizing_start(cov, weights)
    cfg = SolverConfig(max_iters=5000, grad_tol=1e-10, preconditioner="natural")
    trace = offline_solve(cov, weights, theta0,
                          cfg.updated(eta=find_max_step(cov, weights, theta0, cfg)))
    _, ce = certainty_equivalent_policy(cov, weights)

    assert trace.status is SolverStatus.CONVERGED
    assert _relative_gain_error(trace.policy, ce) < 1e-6
    assert trace.costs[-1] == pytest.approx(model_cost(ls_identify(cov), weights, ce), rel=1e-9)


def test_rollout_scalar_oracle():
    sys = LtiSystem([[0.0]], [[1.0]])
    result = tracking_rollout(sys, CostWeights([[1.0]], [[1.0]]), TrackingPolicy([[0.0]], [[0.5]]),
                              ReferenceSignal.constant([1.0]), NoiseModel(), 20, x0=[0.5])
    assert result.cost == pytest.approx(0.5, abs=1e-15)
    assert result.tracking_error == pytest.approx(0.5, abs=1e-15)
    assert list(result.frame.columns) == ["t", "x1", "z1", "u1", "stage_cost"]


def test_rollout_rejects_unstable_policy(scalar_sys, scalar_weights):
    with pytest.raises(InstabilityError):
        tracking_rollout(scalar_sys, scalar_weights, TrackingPolicy([[1.0]], [[0.0]]),
                         ReferenceSignal.constant([1.0]), NoiseModel(), 10)


def test_rollout_on_short_table(scalar_sys, scalar_weights):
    ref = ReferenceSignal.from_table(np.ones((12, 1)))
    policy, _ = optimal_gains(scalar_sys, scalar_weights)
    result = tracking_rollout(scalar_sys, scalar_weights, policy, ref,
                              NoiseModel(process_std=0.1, seed=1), 12,
                              x0=[0.0], rng=np.random.Generator(np.random.Philox(0)))
    assert len(result.frame) == 12
    assert np.isfinite(result.cost)


def test_online_stays_at_optimum_without_noise(bench_full):
    sys, weights = bench_full
    tracking, _ = optimal_gains(sys, weights)
    noise = NoiseModel(process_std=0.0, exploration_std=0.0, seed=8, precollect_std=1.0)
    state = OnlineState.initialize(sys, tracking, noise, precollect=9)
    assert state.V_prime is not None

    ref = ReferenceSignal.constant([1.0, 0.0, -1.0, 2.0])
    trace = online_run(sys, weights, ref, state, SolverConfig(eta=0.01), 60)

    assert trace.status is OnlineStatus.COMPLETED
    assert np.max(np.abs(trace.gaps)) < 1e-8
    assert trace.count(EventKind.SKIPPED_PE) == 0
    np.testing.assert_allclose(state.K, tracking.K, atol=1e-8)
    np.testing.assert_allclose(state.K_v, tracking.K_v, atol=1e-8)
    assert state.t == 69


def test_online_closes_gap_on_noise_free_scalar(scalar_sys, scalar_weights):
    noise = NoiseModel(process_std=0.0, exploration_std=1.0, seed=3, precollect_std=1.0)
    zero = TrackingPolicy([[0.0]], [[0.0]])
    state = OnlineState.initialize(scalar_sys, zero, noise, precollect=4)
    trace = online_run(scalar_sys, scalar_weights, ReferenceSignal.constant([1.0]), state,
                       SolverConfig(eta=0.05, preview_horizon=5), 300)

    gaps = trace.gaps
    assert trace.status is OnlineStatus.COMPLETED
    assert gaps[0] == pytest.approx(0.5, abs=1e-12)
    assert gaps[-1] < 1e-6
    frame = trace.to_frame()
    assert frame["residual"][frame["updated"]].max() < 1e-8
    assert np.all(frame["snr"] == np.inf)


def test_online_halves_oversized_steps(scalar_sys, scalar_weights):
    noise = NoiseModel(process_std=0.0, exploration_std=1.0, seed=3, precollect_std=1.0)
    state = OnlineState.initialize(scalar_sys, TrackingPolicy([[0.0]], [[0.0]]), noise,
                                   precollect=4)
    trace = online_run(scalar_sys, scalar_weights, ReferenceSignal.constant([1.0]), state,
                       SolverConfig(eta=50.0, preview_horizon=5), 100)

    frame = trace.to_frame()
    assert trace.status is OnlineStatus.COMPLETED
    assert trace.count(EventKind.BACKTRACKED) > 0
    assert trace.count(EventKind.REJECTED_STEP) == 0
    assert frame["updated"].all()
    assert trace.gaps[-1] < trace.gaps[0]


def test_online_rejects_step_without_backtracking(scalar_sys, scalar_weights):
    noise = NoiseModel(process_std=0.0, exploration_std=1.0, seed=3, precollect_std=1.0)
    state = OnlineState.initialize(scalar_sys, TrackingPolicy([[0.0]], [[0.0]]), noise,
                                   precollect=4)
    trace = online_run(scalar_sys, scalar_weights, ReferenceSignal.constant([1.0]), state,
                       SolverConfig(eta=1e4, preview_horizon=5, max_backtracks=0), 10)

    assert trace.count(EventKind.REJECTED_STEP) == 10
    assert trace.count(EventKind.BACKTRACKED) == 0
    assert not trace.to_frame()["updated"].any()
    np.testing.assert_allclose(state.K_v, [[0.0]])


@pytest.mark.integration
def test_online_updates_are_accepted_on_benchmark_seeds():
    cfg = ExperimentConfig.from_yaml(EXAMPLES_DIR / "configs" / "benchmark.yaml")
    sys = cfg.systems()[ActuationMode.FULL]
    weights = cfg.weights_for(sys)
    zero = np.zeros((sys.m, sys.n))
    for run in range(cfg.runs):
        state = OnlineState.initialize(sys, TrackingPolicy(zero, zero), cfg.noise_for(run),
                                       cfg.precollect)
        trace = online_run(sys, weights, cfg.reference_signal(), state, cfg.solver, 150,
                           cfg.noise_bound)
        accepted = trace.to_frame()["updated"].mean()

        assert trace.status is OnlineStatus.COMPLETED, f"run {run}"
        assert accepted >= 0.9, f"run {run}: {accepted:.2%} of updates accepted"


def test_online_rejects_short_reference_table(scalar_sys, scalar_weights):
    noise = NoiseModel(process_std=0.0, exploration_std=1.0, seed=3, precollect_std=1.0)
    cfg = SolverConfig(eta=0.05, preview_horizon=5)
    state = OnlineState.initialize(scalar_sys, TrackingPolicy([[0.0]], [[0.0]]), noise,
                                   precollect=4)
    with pytest.raises(ReferenceRangeError):
        online_run(scalar_sys, scalar_weights, ReferenceSignal.from_table(np.ones((38, 1))),
                   state, cfg, 30)
    assert state.t == 4

    trace = online_run(scalar_sys, scalar_weights, ReferenceSignal.from_table(np.ones((39, 1))),
                       state, cfg, 30)
    assert trace.status is OnlineStatus.COMPLETED
    assert state.t == 34


def test_applied_gap_uses_the_cost_margin(scalar_weights):
    sys = LtiSystem([[0.5]], [[1.0]])
    marginal = np.array([[0.5 - 1e-10]])
    zero = np.zeros((1, 1))

    gap, L = _applied_gap(sys, scalar_weights, marginal, zero, 1.0)
    assert gap == np.inf
    assert np.isnan(L).all()
    assert _applied_gap(sys, scalar_weights, marginal, zero, 1.0, margin=1e-12)[0] < np.inf
    assert np.isfinite(_applied_gap(sys, scalar_weights, np.array([[-0.5]]), zero, 1.0)[0])


def test_online_aborts_on_blow_up():
    sys = LtiSystem([[1.5]], [[1.0]])
    weights = CostWeights([[1.0]], [[1.0]])
    state = OnlineState.initialize(sys, TrackingPolicy([[0.0]], [[0.0]]), NoiseModel(seed=1),
                                   precollect=0, x0=[1.0])
    trace = online_run(sys, weights, ReferenceSignal.constant([0.0]), state,
                       SolverConfig(blowup_factor=10.0), 100)

    assert trace.status is OnlineStatus.ABORTED
    assert trace.events[-1].kind is EventKind.ABORTED
    assert trace.count(EventKind.SKIPPED_PE) > 0
    assert len(trace.rows) < 100
    assert trace.gaps[0] == np.inf
