import logging

import numpy as np

from deepo_lqt import (
    CostWeights,
    DecoupledPolicy,
    LtiSystem,
    NoiseModel,
    SolverConfig,
    collect_trajectory,
    model_cost,
    offline_solve,
    optimal_gains,
)

"""
Use case:  Sanity-check the library on a system whose answer is known by hand.
For x+ = u with q = r = 1 the Riccati solution is P = 1, so K* = 0, K_v* = 0.5,
L* = 0.5 and the optimal cost is 1.5.  Offline DeePO on noise-free data lands there.
"""

logging.basicConfig(level=logging.INFO, format='%(message)s')
logger = logging.getLogger("scalar_oracle_example")

def main():
    sys = LtiSystem([[0.0]], [[1.0]])
    weights = CostWeights([[1.0]], [[1.0]])

    tracking, decoupled = optimal_gains(sys, weights)
    print(f"K* = {tracking.K}, K_v* = {tracking.K_v}, L* = {decoupled.L}")
    print(f"C(theta*) = {model_cost(sys, weights, decoupled):.12f}")

    noise = NoiseModel(process_std=0.0, exploration_std=0.0, seed=7, precollect_std=1.0)
    _, cov, _ = collect_trajectory(sys, noise, 4)
    trace = offline_solve(cov, weights, DecoupledPolicy.zeros(1, 1), SolverConfig(eta=0.1))
    K, L = trace.policy
    print(f"DeePO after {trace.iterations} iterations ({trace.status.value}): "
          f"K = {K}, L = {L}, cost = {trace.costs[-1]:.12f}")
    print(f"max |theta - theta*| = {np.max(np.abs(np.hstack([K, L]) - decoupled.theta)):.2e}")

if __name__ == "__main__":
    main()
