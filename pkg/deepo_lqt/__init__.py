from importlib.metadata import PackageNotFoundError, version

from .data_log import CovarianceData, DataLog, collect_trajectory, ls_identify
from .deepo import (
    OnlineState,
    SolverConfig,
    certainty_equivalent_policy,
    offline_solve,
    online_run,
    stabilizing_start,
    tracking_rollout,
)
from .exceptions import (
    ConfigError,
    DeePOError,
    ExcitationError,
    InfeasiblePolicyError,
    InstabilityError,
)
from .harness import ExperimentHarness, run_offline_experiment, run_online_experiment
from .lqt_cost import data_cost, data_grad, model_cost, model_grad
from .lti_core import (
    CostWeights,
    DecoupledPolicy,
    LtiSystem,
    NoiseModel,
    ReferenceSignal,
    TrackingPolicy,
    optimal_gains,
    solve_dare,
)
from .report import emit_summary
from .settings import ExperimentConfig

# Names a typical experiment script needs; the modules hold the rest.
__all__ = [
    'ExperimentHarness', 'ExperimentConfig', 'run_offline_experiment', 'run_online_experiment',
    'emit_summary', 'LtiSystem', 'CostWeights', 'TrackingPolicy', 'DecoupledPolicy',
    'ReferenceSignal', 'NoiseModel', 'DataLog', 'CovarianceData', 'collect_trajectory',
    'ls_identify', 'solve_dare', 'optimal_gains', 'model_cost', 'model_grad', 'data_cost',
    'data_grad', 'SolverConfig', 'offline_solve', 'stabilizing_start',
    'certainty_equivalent_policy', 'OnlineState',
    'online_run', 'tracking_rollout', 'DeePOError', 'ConfigError', 'ExcitationError',
    'InfeasiblePolicyError', 'InstabilityError',
]
try:
    __version__ = version("deepo_lqt")
except PackageNotFoundError:
    __version__ = "unknown"
