# -*- coding: utf-8 -*-
import numpy as np
import pytest

from deepo_lqt.data_log import CovarianceData, pe_check
from deepo_lqt.exceptions import DimensionError, ExcitationError, SingularityError
from deepo_lqt.lti_core import optimal_gains
from deepo_lqt.policy_param import (
    CovariancePolicy,
    kv_to_l,
    l_to_kv,
    projection,
    q_factor,
    scaling_matrix,
    theta_to_xi,
    xi_to_theta,
)

pytestmark = pytest.mark.unit


def test_theta_to_xi_satisfies_constraints(bench_data, rng):
    _, cov = bench_data
    K = 0.1 * rng.standard_normal((cov.m, cov.n))
    L = rng.standard_normal((cov.m, cov.n))
    xi = theta_to_xi(K, L, cov)

    np.testing.assert_allclose(cov.Xbar0 @ xi.V, np.eye(cov.n), atol=1e-9)
    np.testing.assert_allclose(cov.Xbar0 @ xi.H, 0.0, atol=1e-9)
    assert xi.constraint_residual(cov) < 1e-8
    back = xi_to_theta(xi, cov)
    np.testing.assert_allclose(back.K, K, atol=1e-9)
    np.testing.assert_allclose(back.L, L, atol=1e-9)


def test_theta_to_xi_requires_excitation():
    cov = CovarianceData(np.zeros((1, 2)), np.array([[0.0, 1.0]]), np.zeros((1, 2)), 1)
    with pytest.raises(ExcitationError):
        theta_to_xi([[0.0]], [[0.0]], cov)


def test_xi_to_theta_checks_rows(bench_data):
    _, cov = bench_data
    with pytest.raises(DimensionError):
        xi_to_theta(CovariancePolicy(np.zeros((3, 4)), np.zeros((3, 4))), cov)


def test_xi_stack_and_split():
    xi = CovariancePolicy(np.ones((3, 2)), np.zeros((3, 2)))
    assert xi.xi.shape == (3, 4)
    again = CovariancePolicy.from_xi(xi.xi)
    np.testing.assert_array_equal(again.V, xi.V)
    np.testing.assert_array_equal(again.H, xi.H)


def test_kv_l_conversions_are_inverse(rng):
    A_cl = 0.3 * rng.standard_normal((3, 3))
    Q = np.diag([1.0, 2.0, 0.5])
    K_v = rng.standard_normal((2, 3))
    L = kv_to_l(K_v, A_cl, Q)
    np.testing.assert_allclose(l_to_kv(L, A_cl, Q), K_v, atol=1e-12)
    np.testing.assert_allclose(l_to_kv(L, A_cl, Q, factor=q_factor(Q)), K_v, atol=1e-12)


def test_kv_to_l_reproduces_optimal_set_point_gain(bench):
    sys, weights = bench
    tracking, decoupled = optimal_gains(sys, weights)
    A_cl = sys.closed_loop(tracking.K)
    np.testing.assert_allclose(kv_to_l(tracking.K_v, A_cl, weights.Q), decoupled.L, atol=1e-10)


def test_conversion_with_unit_closed_loop_is_singular():
    with pytest.raises(SingularityError):
        kv_to_l([[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(SingularityError):
        l_to_kv([[1.0]], [[1.0]], [[1.0]])


def test_projection_properties(bench_data):
    _, cov = bench_data
    pi = projection(cov)
    np.testing.assert_allclose(pi @ pi, pi, atol=1e-10)
    np.testing.assert_allclose(pi, pi.T, atol=1e-12)
    np.testing.assert_allclose(cov.Xbar0 @ pi, 0.0, atol=1e-10)
    assert np.trace(pi) == pytest.approx(cov.m, abs=1e-8)


def test_scaling_matrix_lower_bound(bench_data):
    """sigma_min(M) is bounded below by gamma**4 on exciting data."""
    _, cov = bench_data
    scaling = scaling_matrix(cov)
    _, gamma = pe_check(cov)
    assert scaling.sigma_min >= gamma ** 4 * (1 - 1e-9)
    assert scaling.norm >= scaling.sigma_min > 0
    np.testing.assert_allclose(scaling.M, scaling.M.T, atol=1e-14)
