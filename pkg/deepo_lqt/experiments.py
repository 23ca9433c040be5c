# -*- coding: utf-8 -*-
"""
Experiment Services

The offline and online experiment protocols. Each service is attached to an
``ExperimentHarness`` and reads its configuration from it; Monte Carlo runs
are dispatched through the harness so they can execute in worker processes.
Results come back as an ``ArtifactSet``: CSV families written to the output
directory, headline metrics, acceptance checks and aborted runs.

Exposed Methods:
    OfflineExperiment.run, OnlineExperiment.run
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from .data_log import collect_trajectory, ls_identify
from .deepo import (
    EventKind,
    OnlineState,
    OnlineStatus,
    SolverStatus,
    certainty_equivalent_policy,
    find_max_step,
    offline_solve,
    online_run,
    stabilizing_start,
    tracking_rollout,
)
from .exceptions import DeePOError
from .lqt_cost import model_cost
from .lti_core import TrackingPolicy, optimal_gains, spectral_radius
from .policy_param import l_to_kv
from .report import AcceptanceCheck, fit_linear_rate, fit_two_phase, theil_sen_drift

logger = logging.getLogger("deepo_lqt")

GAP_TARGET = 1e-1
CE_TOLERANCE = 1e-6


@dataclass(eq=False)
class ArtifactSet:
    """Files, frames, metrics and checks produced by one experiment."""
    name: str
    kind: str
    output: Path
    files: Dict[str, Path] = field(default_factory=dict)
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)
    metrics: Dict[str, object] = field(default_factory=dict)
    checks: List[AcceptanceCheck] = field(default_factory=list)
    aborted: List[str] = field(default_factory=list)

    def write(self, family, frame):
        """Write ``frame`` as ``<output>/<name>_<family>.csv``."""
        self.output.mkdir(parents=True, exist_ok=True)
        path = self.output / f"{self.name}_{family}.csv"
        frame.to_csv(path, index=False, float_format="%.17g")
        self.files[family] = path
        self.frames[family] = frame
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def check(self, name, passed, detail=""):
        self.checks.append(AcceptanceCheck(name, bool(passed), detail))
        if not passed:
            logger.warning(f"acceptance check failed: {name} ({detail})")

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def is_empty(self):
        return not (self.files or self.metrics or self.checks or self.aborted)


def _offline_job(job):
    """One offline Monte Carlo run: solve, compare to CE and deploy."""
    cfg, mode, run = job
    sys = cfg.systems()[mode]
    weights = cfg.weights_for(sys)
    noise = cfg.noise_for(run)
    tag = f"{mode.value} run {run}"
    try:
        _, cov, _ = collect_trajectory(sys, noise, cfg.precollect, noise.make_rng())
        solver = cfg.offline_solver()
        theta0, stabilized = stabilizing_start(cov, weights, solver.margin)
        eta = find_max_step(cov, weights, theta0, solver)
        trace = offline_solve(cov, weights, theta0, solver.updated(eta=eta))

        ce_tracking, ce_decoupled = certainty_equivalent_policy(cov, weights)
        ce_cost = model_cost(ls_identify(cov), weights, ce_decoupled)
        frame = trace.to_frame(reference_cost=ce_cost, reference_policy=ce_decoupled)
        frame.insert(0, "mode", mode.value)
        frame.insert(1, "run", run)

        K, L = trace.policy
        policies = {
            "deepo": TrackingPolicy(K, l_to_kv(L, cov.Xbar1 @ trace.xi.V, weights.Q)),
            "ce": ce_tracking,
            "optimal": optimal_gains(sys, weights)[0],
        }
        costs, tracks = [], []
        for label, policy in policies.items():
            result = tracking_rollout(sys, weights, policy, cfg.reference_signal(), noise,
                                      cfg.rollout_horizon, rng=noise.make_rng(1))
            costs.append({"mode": mode.value, "run": run, "policy": label,
                          "cost": result.cost, "tracking_error": result.tracking_error})
            if run == 0:
                track = result.frame
                track.insert(0, "mode", mode.value)
                track.insert(1, "policy", label)
                tracks.append(track)
    except DeePOError as e:
        return {"mode": mode, "run": run, "error": f"{tag}: {type(e).__name__}: {e}"}
    return {
        "mode": mode,
        "run": run,
        "error": None,
        "eta": eta,
        "stabilized": stabilized,
        "status": trace.status,
        "frame": frame,
        "costs": costs,
        "tracks": tracks,
    }


def _online_job(job):
    """One online Monte Carlo run for a given H-block multiplier."""
    cfg, mode, eta_h, run = job
    sys = cfg.systems()[mode]
    weights = cfg.weights_for(sys)
    noise = cfg.noise_for(run)
    tag = f"{mode.value} eta_h={eta_h:g} run {run}"
    if spectral_radius(sys.A) >= 1.0:
        return {"mode": mode,
                "error": f"{tag}: online runs start from zero gains and need a stable A"}
    try:
        zero = np.zeros((sys.m, sys.n))
        state = OnlineState.initialize(sys, TrackingPolicy(zero, zero), noise, cfg.precollect)
        trace = online_run(sys, weights, cfg.reference_signal(), state,
                           cfg.solver.updated(eta_h_factor=eta_h), cfg.online_horizon,
                           cfg.noise_bound)
    except DeePOError as e:
        return {"mode": mode, "error": f"{tag}: {type(e).__name__}: {e}"}
    frame = trace.to_frame()
    frame.insert(0, "mode", mode.value)
    frame.insert(1, "eta_h", eta_h)
    frame.insert(2, "run", run)
    error = None
    if trace.status is OnlineStatus.ABORTED:
        error = f"{tag}: {trace.events[-1].message}"
    return {
        "mode": mode,
        "error": error,
        "frame": frame,
        "rejected": trace.count(EventKind.REJECTED_STEP),
        "backtracked": trace.count(EventKind.BACKTRACKED),
        "skipped": trace.count(EventKind.SKIPPED_PE) + trace.count(EventKind.INFEASIBLE),
    }


def _sweep_offline_job(job):
    """Offline iterations to reach the 0.1 gap for one H-block multiplier."""
    cfg, mode, eta_h = job
    sys = cfg.systems()[mode]
    weights = cfg.weights_for(sys)
    noise = cfg.noise_for(0)
    try:
        _, cov, _ = collect_trajectory(sys, noise, cfg.precollect, noise.make_rng())
        solver = cfg.offline_solver().updated(eta_h_factor=eta_h)
        theta0, _ = stabilizing_start(cov, weights, solver.margin)
        trace = offline_solve(cov, weights, theta0, solver)
        _, ce_decoupled = certainty_equivalent_policy(cov, weights)
        gaps = trace.costs - model_cost(ls_identify(cov), weights, ce_decoupled)
    except DeePOError as e:
        return {"mode": mode.value, "eta_h": eta_h, "iterations_to_target": float("nan"),
                "status": f"error: {e}"}
    hits = np.flatnonzero(gaps <= GAP_TARGET)
    return {
        "mode": mode.value,
        "eta_h": eta_h,
        "iterations_to_target": float(hits[0]) if hits.size else float("nan"),
        "status": trace.status.value,
    }


def _check_completed(artifacts, label, results):
    """Fail the mode when any of its Monte Carlo runs aborted."""
    aborted = [r for r in results if r["error"] is not None]
    artifacts.check(f"{label}: runs completed", not aborted,
                    f"{len(results) - len(aborted)}/{len(results)} runs, {len(aborted)} aborted")


class OfflineExperiment:
    def __init__(self, harness):
        """
        Initialize the service with a reference to the owning harness
        """
        self.harness = harness

    def run(self):
        """
        Offline DeePO on pre-collected data for every actuation mode.

        Per Monte Carlo run the solve starts from ``stabilizing_start`` with
        the step size found by halving search. The result is compared against
        the certainty-equivalent optimum of the same data, and the DeePO, CE
        and true-optimal policies are deployed on the reference.

        Returns
        -------
        ArtifactSet
            Families ``offline_convergence``, ``tracking_costs`` and
            ``offline_tracking``.
        """
        cfg = self.harness.config
        artifacts = ArtifactSet(cfg.name, "offline", cfg.output)
        logger.info(f"Starting offline experiment '{cfg.name}' with {cfg.runs} runs")
        jobs = [(cfg, mode, run) for mode in cfg.actuation for run in range(cfg.runs)]
        results = self.harness.map(_offline_job, jobs)

        ok = [r for r in results if r["error"] is None]
        artifacts.aborted.extend(r["error"] for r in results if r["error"] is not None)
        for mode in cfg.actuation:
            _check_completed(artifacts, mode.value, [r for r in results if r["mode"] is mode])
        if not ok:
            return artifacts
        convergence = pd.concat([r["frame"] for r in ok], ignore_index=True)
        costs = pd.DataFrame([row for r in ok for row in r["costs"]])
        artifacts.write("offline_convergence", convergence)
        artifacts.write("tracking_costs", costs)
        tracks = [t for r in ok for t in r["tracks"]]
        if tracks:
            artifacts.write("offline_tracking", pd.concat(tracks, ignore_index=True))

        for mode in cfg.actuation:
            self._assess_mode(artifacts, mode, [r for r in ok if r["mode"] is mode], costs)
        return artifacts

    def _assess_mode(self, artifacts, mode, results, costs):
        label = mode.value
        if not results:
            return
        converged = [r for r in results if r["status"] is SolverStatus.CONVERGED]
        artifacts.metrics[f"{label}.converged_runs"] = f"{len(converged)}/{len(results)}"
        artifacts.metrics[f"{label}.eta"] = float(np.min([r["eta"] for r in results]))
        artifacts.metrics[f"{label}.stabilized_starts"] = sum(r["stabilized"] for r in results)

        monotone = True
        for r in results:
            cost = r["frame"]["cost"].to_numpy()
            monotone = monotone and bool(np.all(np.diff(cost) <= 1e-12 * cost[:-1]))
        artifacts.check(f"{label}: monotone cost", monotone, "C(xi^k) non-increasing in every run")

        if converged:
            errors = [float(r["frame"]["gain_error"].iloc[-1]) for r in converged]
            worst = max(errors)
            artifacts.metrics[f"{label}.max_gain_error_vs_ce"] = worst
            artifacts.check(f"{label}: CE equivalence", worst < CE_TOLERANCE,
                            f"max relative gain error {worst:.3e} < {CE_TOLERANCE:g}")
        else:
            artifacts.check(f"{label}: CE equivalence", False, "no run converged")

        fits = [fit_linear_rate(r["frame"]["gap"].to_numpy()) for r in results]
        fits = [f for f in fits if f is not None]
        if fits:
            worst = min(f.r2 for f in fits)
            rate = float(np.median([f.rate for f in fits]))
            artifacts.metrics[f"{label}.linear_rate"] = rate
            artifacts.metrics[f"{label}.linear_rate_r2_min"] = worst
            artifacts.check(f"{label}: linear convergence", worst > 0.99,
                            f"linear rate rho={rate:.6g}, R^2={worst:.6f}")
        else:
            artifacts.check(f"{label}: linear convergence", False, "gap never entered [1e-8, 1e-1]")

        mode_costs = costs[costs["mode"] == label]
        means = mode_costs.groupby("policy")["cost"].mean()
        for policy, value in means.items():
            artifacts.metrics[f"{label}.tracking_cost.{policy}"] = float(value)
        if {"deepo", "ce", "optimal"} <= set(means.index):
            vs_ce = abs(means["deepo"] - means["ce"]) / means["ce"]
            vs_opt = abs(means["deepo"] - means["optimal"]) / means["optimal"]
            artifacts.check(f"{label}: tracking parity", vs_ce <= 0.02 and vs_opt <= 0.05,
                            f"DeePO vs CE {vs_ce:.2%}, vs optimal {vs_opt:.2%}")
        if label == "under":
            residual = mode_costs.groupby("policy")["tracking_error"].mean()
            artifacts.check(f"{label}: residual tracking error", bool((residual > 0).all()),
                            ", ".join(f"{p}={v:.4g}" for p, v in residual.items()))


class OnlineExperiment:
    def __init__(self, harness):
        """
        Initialize the service with a reference to the owning harness
        """
        self.harness = harness

    def run(self):
        """
        Online DeePO over every actuation mode, H-block multiplier and run.

        The first entry of ``eta_h_sweep`` is the base configuration whose
        per-run traces are written in full; the other multipliers contribute
        their mean gap curves and offline iteration counts.

        Returns
        -------
        ArtifactSet
            Families ``online_gap``, ``online_gap_mean``, ``online_tracking``,
            ``excitation``, ``eta_h_sweep`` and ``eta_h_offline``.
        """
        cfg = self.harness.config
        artifacts = ArtifactSet(cfg.name, "online", cfg.output)
        logger.info(f"Starting online experiment '{cfg.name}' with {cfg.runs} runs "
                    f"and eta_h sweep {list(cfg.eta_h_sweep)}")
        modes = cfg.online_modes()
        jobs = [(cfg, mode, eta_h, run) for mode in modes
                for eta_h in cfg.eta_h_sweep for run in range(cfg.runs)]
        results = self.harness.map(_online_job, jobs)
        sweep_jobs = [(cfg, mode, eta_h) for mode in modes for eta_h in cfg.eta_h_sweep]
        sweep_offline = self.harness.map(_sweep_offline_job, sweep_jobs)

        artifacts.aborted.extend(r["error"] for r in results if r["error"] is not None)
        for mode in modes:
            _check_completed(artifacts, mode.value, [r for r in results if r["mode"] is mode])
        frames = [r["frame"] for r in results if "frame" in r]
        if not frames:
            return artifacts
        rows = pd.concat(frames, ignore_index=True)
        artifacts.metrics["rejected_steps"] = int(sum(r.get("rejected", 0) for r in results))
        artifacts.metrics["backtracked_steps"] = int(sum(r.get("backtracked", 0) for r in results))
        artifacts.metrics["skipped_updates"] = int(sum(r.get("skipped", 0) for r in results))

        base = rows[rows["eta_h"] == cfg.eta_h_sweep[0]]
        gap_columns = ["mode", "run", "t", "gap", "cost", "norm_x", "snr", "running_cost",
                       "updated"]
        artifacts.write("online_gap", base[gap_columns])
        mean = base.groupby(["mode", "t"])["gap"].agg(["mean", "min", "max"]).reset_index()
        artifacts.write("online_gap_mean", mean)
        state_columns = [c for c in base.columns if c[0] in "xzu" and c[1:].isdigit()]
        first = base[base["run"] == base["run"].min()]
        artifacts.write("online_tracking", first[["mode", "t"] + state_columns])
        excitation_columns = ["mode", "run", "t", "sigma_min_M", "gamma4", "sigma_min_U",
                              "sigma_min_U_raw", "snr"]
        artifacts.write("excitation", base[excitation_columns])
        sweep = rows.groupby(["mode", "eta_h", "t"])["gap"].mean().reset_index()
        artifacts.write("eta_h_sweep", sweep)
        sweep_offline = pd.DataFrame(sweep_offline)
        artifacts.write("eta_h_offline", sweep_offline)

        for mode in modes:
            self._assess_mode(artifacts, mode.value, base, sweep, sweep_offline, results)
        return artifacts

    def _assess_mode(self, artifacts, label, base, sweep, sweep_offline, results):
        rows = base[base["mode"] == label]
        if rows.empty:
            return
        per_t = rows.groupby("t")[["gap", "snr", "sigma_min_M"]].mean()
        gaps = per_t["gap"].to_numpy()
        envelope = fit_two_phase(gaps, per_t["snr"].to_numpy())
        drop = gaps[0] / envelope.floor if envelope.floor > 0 else float("inf")
        artifacts.metrics[f"{label}.initial_gap"] = float(gaps[0])
        artifacts.metrics[f"{label}.final_floor"] = envelope.floor
        artifacts.metrics[f"{label}.early_rate"] = envelope.rho
        artifacts.metrics[f"{label}.snr_floor_constant"] = envelope.c
        artifacts.check(f"{label}: gap reduction", drop >= 100.0,
                        f"initial/floor = {drop:.3g} (needs >= 100)")
        artifacts.check(f"{label}: early linear phase", envelope.r2 > 0.95,
                        f"rho={envelope.rho:.6g}, R^2={envelope.r2:.4f}")
        bounded = 0 < envelope.rho < 1 and np.isfinite(envelope.c)
        artifacts.check(f"{label}: SNR-limited floor", bounded,
                        f"gap <= rho^t gap_0 + c/SNR_t with c={envelope.c:.4g}")

        aborted = [r for r in results if r["error"] is not None and r["mode"].value == label]
        max_norm = float(rows["norm_x"].max())
        artifacts.metrics[f"{label}.max_state_norm"] = max_norm
        artifacts.check(f"{label}: bounded state", not aborted and np.isfinite(max_norm),
                        f"max ||x_t|| = {max_norm:.4g}, aborted runs = {len(aborted)}")

        pe_rows = rows[rows["sigma_min_M"].notna()]
        margin = (pe_rows["sigma_min_M"] - pe_rows["gamma4"] * (1.0 - 1e-9)).min()
        artifacts.check(f"{label}: sigma_min(M) >= gamma^4", bool(margin >= -1e-15),
                        f"min margin {margin:.3e}")
        half = per_t["sigma_min_M"].to_numpy()
        half = half[len(half) // 2:]
        slope, low, high = theil_sen_drift(half)
        artifacts.metrics[f"{label}.sigma_min_M_slope"] = slope
        artifacts.check(f"{label}: sigma_min(M) plateau", not high < 0,
                        f"Theil-Sen slope {slope:.3e}, 95% interval [{low:.3e}, {high:.3e}]")

        accepted = rows[rows["updated"].astype(bool)]
        artifacts.metrics[f"{label}.accepted_updates"] = len(accepted) / len(rows)
        residual = float(accepted["residual"].max()) if not accepted.empty else 0.0
        artifacts.check(f"{label}: data constraints", residual < 1e-8,
                        f"max ||X0 V - I|| + ||X0 H|| = {residual:.3e}")

        offline = sweep_offline[sweep_offline["mode"] == label].sort_values("eta_h")
        counts = offline["iterations_to_target"].fillna(np.inf).to_numpy()
        artifacts.check(f"{label}: eta_h offline speed-up", bool(np.all(np.diff(counts) <= 0)),
                        "iterations to 0.1 gap: " + ", ".join(
                            f"{h:g}->{c:g}" for h, c in zip(offline["eta_h"], counts)))
        curves = sweep[sweep["mode"] == label]
        floors = []
        for _, curve in curves.groupby("eta_h"):
            values = curve.sort_values("t")["gap"].to_numpy()
            floors.append(float(np.mean(values[-max(1, len(values) // 10):])))
        if floors and min(floors) > 0:
            ratio = max(floors) / min(floors)
            artifacts.check(f"{label}: eta_h online floors", ratio <= 2.0,
                            f"max/min floor ratio {ratio:.3g}")
