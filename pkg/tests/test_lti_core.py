# -*- coding: utf-8 -*-
import numpy as np
import pytest
from scipy import linalg

from deepo_lqt.exceptions import (
    DeePOError,
    DimensionError,
    DivergenceError,
    InstabilityError,
    ReferenceRangeError,
)
from deepo_lqt.lti_core import (
    ActuationMode,
    CostWeights,
    LtiSystem,
    NoiseModel,
    ReferenceSignal,
    benchmark_reference,
    benchmark_system,
    dare_residual,
    optimal_gains,
    preview_tracking_state,
    random_stable_system,
    reference_at,
    reference_window,
    simulate_step,
    solve_dare,
    solve_dlyap,
    spectral_radius,
    tracking_states,
)

pytestmark = pytest.mark.unit


def test_scalar_riccati_oracle(scalar_sys, scalar_weights):
    P = solve_dare(scalar_sys, scalar_weights)
    tracking, decoupled = optimal_gains(scalar_sys, scalar_weights)

    assert P[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert tracking.K[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert tracking.K_v[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert decoupled.L[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_dare_matches_scipy_on_random_systems(rng):
    for _ in range(25):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 5))
        sys = random_stable_system(n, m, rng, radius=float(rng.uniform(0.3, 0.95)))
        weights = CostWeights.scaled_identity(n, m, q=1.0, r=float(rng.uniform(0.1, 2.0)))

        P = solve_dare(sys, weights)
        expected = linalg.solve_discrete_are(sys.A, sys.B, weights.Q, weights.R)

        assert dare_residual(sys, weights, P) < 1e-10 * max(1.0, np.abs(P).max())
        np.testing.assert_allclose(P, expected, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(P, P.T)


def test_dare_benchmark_residual(bench):
    sys, weights = bench
    P = solve_dare(sys, weights)
    assert dare_residual(sys, weights, P) < 1e-10 * max(1.0, np.abs(P).max())
    tracking, _ = optimal_gains(sys, weights)
    assert spectral_radius(sys.closed_loop(tracking.K)) < 1.0


def test_dare_damping_reaches_same_solution(rng):
    sys = random_stable_system(3, 2, rng)
    weights = CostWeights.scaled_identity(3, 2)
    np.testing.assert_allclose(solve_dare(sys, weights, damping=0.5),
                               solve_dare(sys, weights), rtol=1e-9, atol=1e-9)


def test_dare_unstabilizable_raises():
    sys = LtiSystem([[2.0]], [[0.0]])
    with pytest.raises(DivergenceError):
        solve_dare(sys, CostWeights([[1.0]], [[1.0]]), max_iter=2000)


def test_dare_iteration_cap_reports_residual(rng):
    sys = random_stable_system(3, 1, rng, radius=0.99)
    with pytest.raises(DivergenceError) as excinfo:
        solve_dare(sys, CostWeights.scaled_identity(3, 1), max_iter=2)
    assert excinfo.value.iterations == 2
    assert excinfo.value.residual > 0


def test_optimal_gain_formulas(bench):
    """K* = -S^-1 B'PA and K_v* = S^-1 B' with S = R + B'PB."""
    sys, weights = bench
    P = solve_dare(sys, weights)
    S = weights.R + sys.B.T @ P @ sys.B
    tracking, decoupled = optimal_gains(sys, weights)

    np.testing.assert_allclose(S @ tracking.K, -sys.B.T @ P @ sys.A, atol=1e-10)
    np.testing.assert_allclose(S @ tracking.K_v, sys.B.T, atol=1e-10)
    A_cl = sys.closed_loop(tracking.K)
    np.testing.assert_allclose(decoupled.L @ np.linalg.inv(weights.Q) @ (np.eye(sys.n) - A_cl).T,
                               tracking.K_v, atol=1e-10)


@pytest.mark.parametrize("n", [3, 40])
def test_dlyap_matches_scipy(rng, n):
    A = rng.standard_normal((n, n))
    A *= 0.8 / spectral_radius(A)
    S = rng.standard_normal((n, n))
    S = S @ S.T

    X = solve_dlyap(A, S)
    np.testing.assert_allclose(X, linalg.solve_discrete_lyapunov(A, S), rtol=1e-8, atol=1e-8)
    X_t = solve_dlyap(A, S, transpose=True)
    np.testing.assert_allclose(X_t, S + A.T @ X_t @ A, rtol=1e-8, atol=1e-8)


def test_dlyap_rejects_unstable():
    with pytest.raises(InstabilityError) as excinfo:
        solve_dlyap([[1.0, 0.0], [0.0, 0.2]], np.eye(2))
    assert excinfo.value.rho == pytest.approx(1.0)


def test_tracking_states_constant_reference_is_steady_state(rng):
    A_cl = 0.5 * np.eye(2) + 0.1 * rng.standard_normal((2, 2))
    Q = np.diag([1.0, 3.0])
    z = np.array([2.0, -1.0])
    vs = tracking_states(A_cl, Q, np.tile(z, (30, 1)))
    expected = np.linalg.solve(np.eye(2) - A_cl.T, Q @ z)
    for v in vs:
        np.testing.assert_allclose(v, expected, atol=1e-12)


def test_tracking_states_backward_recursion(rng):
    A_cl = 0.4 * rng.standard_normal((3, 3)) / 3
    Q = np.eye(3)
    refs = rng.standard_normal((6, 3))
    vs = tracking_states(A_cl, Q, refs)
    for s in range(5):
        np.testing.assert_allclose(vs[s], A_cl.T @ vs[s + 1] + Q @ refs[s], atol=1e-12)
    np.testing.assert_allclose(preview_tracking_state(A_cl, Q, refs), vs[0])


def test_benchmark_reference_values():
    np.testing.assert_allclose(reference_at(benchmark_reference(), 0), [0.0, 0.0, 0.0, 10.0])
    z = reference_at(benchmark_reference(), 100)
    np.testing.assert_allclose(z, [50 * np.sin(0.3), 0.3, 50 * np.sin(0.9), 10.0], atol=1e-12)


def test_reference_table_window_and_bounds():
    ref = ReferenceSignal.from_table(np.arange(10.0).reshape(5, 2))
    np.testing.assert_allclose(reference_window(ref, 1, 2), [[2.0, 3.0], [4.0, 5.0]])
    assert ref.sup_norm(100) == pytest.approx(np.hypot(8.0, 9.0))
    with pytest.raises(ReferenceRangeError) as err:
        reference_window(ref, 4, 2)
    assert isinstance(err.value, DeePOError)
    assert isinstance(err.value, IndexError)


def test_constant_reference_declared_bound():
    ref = ReferenceSignal.constant([3.0, 4.0], bound=7.0)
    assert ref.dim == 2
    assert ref.sup_norm(10) == 7.0
    assert ReferenceSignal.constant([3.0, 4.0]).sup_norm(10) == pytest.approx(5.0)


def test_benchmark_underactuated_keeps_first_columns():
    full = benchmark_system(ActuationMode.FULL)
    under = benchmark_system(ActuationMode.UNDER)
    assert (full.n, full.m) == (4, 4)
    assert (under.n, under.m) == (4, 2)
    np.testing.assert_array_equal(under.B, full.B[:, :2])


def test_noise_streams_are_reproducible():
    noise = NoiseModel(process_std=0.1, exploration_std=1.0, seed=42)
    first = noise.process(noise.make_rng(), 5)
    again = noise.process(noise.make_rng(), 5)
    other = noise.process(noise.make_rng(stream=1), 5)
    np.testing.assert_array_equal(first, again)
    assert not np.allclose(first, other)


def test_zero_noise_draws_zeros():
    noise = NoiseModel(seed=3)
    assert not noise.process(noise.make_rng(), 3).any()


def test_simulate_step_with_noise():
    sys = LtiSystem([[0.5]], [[2.0]])
    np.testing.assert_allclose(simulate_step(sys, [1.0], [1.0], [0.25]), [2.75])


def test_shape_and_definiteness_errors():
    with pytest.raises(DimensionError):
        LtiSystem(np.zeros((2, 3)), np.zeros((2, 1)))
    with pytest.raises(DimensionError):
        LtiSystem(np.zeros((2, 2)), np.zeros((3, 1)))
    with pytest.raises(DimensionError):
        CostWeights([[1.0, 0.0], [0.0, -1.0]], [[1.0]])
    with pytest.raises(DimensionError):
        CostWeights([[1.0, 0.5], [0.0, 1.0]], [[1.0]])
    sys = LtiSystem(np.zeros((2, 2)), np.zeros((2, 1)))
    with pytest.raises(DimensionError):
        CostWeights(np.eye(3), np.eye(1)).check(sys)
