# -*- coding: utf-8 -*-
import logging
from pathlib import Path

import numpy as np
import pytest

from deepo_lqt.data_log import collect_trajectory
from deepo_lqt.lti_core import (
    ActuationMode,
    CostWeights,
    LtiSystem,
    NoiseModel,
    benchmark_system,
    benchmark_weights,
)

EXAMPLES_DIR = Path(__file__).resolve().parent.parent / "Examples"

SCALAR_YAML = """\
name: scalar
seed: 7
system:
  A: [[0.0]]
  B: [[1.0]]
actuation: full
weights:
  Q: 1.0
  R: 1.0
noise:
  process_std: 0.0
  exploration_std: 0.0
  precollect_std: 1.0
precollect: 4
solver:
  eta: 0.1
  preview_horizon: 5
offline_iters: 2000
eta_h_sweep: [1, 5]
rollout_horizon: 50
online_horizon: 40
runs: 2
reference:
  kind: constant
  value: [1.0]
"""


@pytest.fixture(autouse=True)
def quiet_library_logs():
    """Keep the library's per-step warnings out of the test output."""
    logging.getLogger("deepo_lqt").setLevel(logging.ERROR)
    yield
    logging.getLogger("deepo_lqt").setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture(scope="session")
def scalar_sys():
    """x+ = u: P = 1, K* = 0, K_v* = L* = 0.5, C(theta*) = 1.5."""
    return LtiSystem([[0.0]], [[1.0]])


@pytest.fixture(scope="session")
def scalar_weights():
    return CostWeights([[1.0]], [[1.0]])


@pytest.fixture(scope="session")
def scalar_cov(scalar_sys):
    """Noise-free, persistently exciting data of the scalar system."""
    noise = NoiseModel(process_std=0.0, exploration_std=0.0, seed=7, precollect_std=1.0)
    _, cov, _ = collect_trajectory(scalar_sys, noise, 4)
    return cov


@pytest.fixture(scope="session", params=[ActuationMode.FULL, ActuationMode.UNDER],
                ids=["full", "under"])
def bench(request):
    """(system, weights) of the benchmark in both actuation modes."""
    sys = benchmark_system(request.param)
    return sys, benchmark_weights(sys.m)


@pytest.fixture(scope="session")
def bench_full():
    sys = benchmark_system(ActuationMode.FULL)
    return sys, benchmark_weights(sys.m)


@pytest.fixture(scope="session")
def bench_data(bench_full):
    """Nine noisy Gaussian-input samples of the fully actuated benchmark."""
    sys, _ = bench_full
    noise = NoiseModel(process_std=0.1, exploration_std=1.0, seed=2024, precollect_std=1.0)
    log, cov, _ = collect_trajectory(sys, noise, 9)
    return log, cov


@pytest.fixture
def scalar_config_path(tmp_path):
    path = tmp_path / "scalar.yaml"
    path.write_text(SCALAR_YAML + f"output: {tmp_path / 'artifacts'}\n")
    return path
