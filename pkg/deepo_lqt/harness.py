# -*- coding: utf-8 -*-
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .experiments import ArtifactSet, OfflineExperiment, OnlineExperiment
from .lqt_cost import model_cost
from .lti_core import optimal_gains, solve_dare, spectral_radius
from .settings import ExperimentConfig

logger = logging.getLogger("deepo_lqt")


class ExperimentHarness:
    """
    The primary interface for running DeePO tracking experiments.

    The harness owns a validated ``ExperimentConfig`` and exposes the
    experiment protocols as service objects. Monte Carlo jobs run serially
    or, when ``workers > 1``, in a process pool; results always come back
    in job order so artifacts do not depend on scheduling.

    Parameters
    ----------
    config : ExperimentConfig
        The experiment protocol.

    Attributes
    ----------
    offline : OfflineExperiment
        Offline DeePO on pre-collected data.
    online : OnlineExperiment
        Online DeePO with the H-block step sweep.
    """
    def __init__(self, config):
        self.config = config
        logger.info(f"Initializing harness for {config!r} with {config.workers} worker(s)")
        self.offline = OfflineExperiment(self)
        self.online = OnlineExperiment(self)

    @classmethod
    def from_yaml(cls, config_path, seed=None, output=None, runs=None):
        """
        Initialize a harness from a YAML experiment file.

        Parameters
        ----------
        config_path : str or pathlib.Path
        seed, output, runs : optional
            Command-line overrides of the file's values.

        Returns
        -------
        ExperimentHarness
        """
        config = ExperimentConfig.from_yaml(config_path)
        return cls(config.with_overrides(seed=seed, output=output, runs=runs))

    def map(self, func, jobs):
        """Apply a picklable ``func`` to each job, preserving order."""
        jobs = list(jobs)
        if self.config.workers <= 1 or len(jobs) <= 1:
            return [func(job) for job in jobs]
        with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(func, jobs))

    def oracle(self):
        """
        Riccati reference values for every actuation mode.

        Returns
        -------
        ArtifactSet
            Metrics hold P, K*, K_v*, L*, C(θ*) and the optimal closed-loop
            spectral radius per mode.
        """
        cfg = self.config
        artifacts = ArtifactSet(cfg.name, "oracle", cfg.output)
        for mode, sys in cfg.systems().items():
            weights = cfg.weights_for(sys)
            P = solve_dare(sys, weights)
            tracking, decoupled = optimal_gains(sys, weights)
            label = mode.value
            artifacts.metrics[f"{label}.P"] = np.array2string(P, precision=10)
            artifacts.metrics[f"{label}.K"] = np.array2string(tracking.K, precision=10)
            artifacts.metrics[f"{label}.K_v"] = np.array2string(tracking.K_v, precision=10)
            artifacts.metrics[f"{label}.L"] = np.array2string(decoupled.L, precision=10)
            artifacts.metrics[f"{label}.cost"] = model_cost(sys, weights, decoupled)
            artifacts.metrics[f"{label}.rho"] = spectral_radius(sys.closed_loop(tracking.K))
        return artifacts

    def validate(self):
        """
        Validate that each configured mode has a Riccati solution.

        Returns
        -------
        ArtifactSet
            One acceptance check per actuation mode.
        """
        cfg = self.config
        artifacts = ArtifactSet(cfg.name, "check", cfg.output)
        artifacts.metrics["config"] = cfg.source or "(in memory)"
        for mode, sys in cfg.systems().items():
            weights = cfg.weights_for(sys)
            tracking, _ = optimal_gains(sys, weights)
            rho = spectral_radius(sys.closed_loop(tracking.K))
            artifacts.check(f"{mode.value}: Riccati solution", rho < 1.0,
                            f"n={sys.n}, m={sys.m}, optimal rho={rho:.6g}")
            if mode in cfg.online_modes() and spectral_radius(sys.A) >= 1.0:
                artifacts.check(f"{mode.value}: open-loop stable", False,
                                "online runs start from zero gains and will be aborted")
        return artifacts

    def check(self):
        """
        Run the acceptance suite: validation, offline and online protocols.

        Returns
        -------
        list of ArtifactSet
        """
        return [self.validate(), self.offline.run(), self.online.run()]

    def __repr__(self):
        return f"<ExperimentHarness(config={self.config!r})>"


def run_offline_experiment(config):
    """Run the offline protocol of ``config`` and return its artifacts."""
    return ExperimentHarness(config).offline.run()


def run_online_experiment(config):
    """Run the online protocol of ``config`` and return its artifacts."""
    return ExperimentHarness(config).online.run()
