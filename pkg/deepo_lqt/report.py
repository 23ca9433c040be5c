# -*- coding: utf-8 -*-
"""
Experiment Reports

Curve fits over emitted traces and the plain-text summary of one or more
artifact sets. The summary lists every artifact family with the file it was
written to, the headline metrics, fitted convergence rates and the outcome
of each acceptance check.

Exposed Methods:
    fit_linear_rate, fit_two_phase, theil_sen_drift, emit_summary, exit_code
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .exceptions import UsageError

logger = logging.getLogger("deepo_lqt")

ARTIFACT_FAMILIES = {
    "offline_convergence": "offline cost gap and gain error per iteration, per actuation mode",
    "offline_tracking": "closed-loop trajectories of DeePO, CE and optimal policies",
    "tracking_costs": "time-averaged tracking cost and error per policy, mode and run",
    "online_gap": "per-run online optimality gap, state norm and SNR",
    "online_gap_mean": "Monte Carlo mean/min/max of the online optimality gap",
    "online_tracking": "online closed-loop trajectory against the reference (first run)",
    "eta_h_sweep": "mean online gap per H-block step multiplier",
    "eta_h_offline": "offline iterations to a 0.1 gap per H-block step multiplier",
    "excitation": "sigma_min(M), gamma^4 and input singular values over the online runs",
}


@dataclass(frozen=True)
class LinearFit:
    """Least-squares line through log10 values: ``rate`` = 10**slope per step."""
    rate: float
    slope: float
    intercept: float
    r2: float
    points: int


@dataclass(frozen=True)
class EnvelopeFit:
    """
    Two-phase description of a gap sequence.

    ``rho`` is the early linear rate, ``c`` the smallest constant with
    gap_t ≤ rho^t·gap_0 + c/SNR_t everywhere, ``floor`` the late-phase level.
    """
    rho: float
    c: float
    r2: float
    floor: float
    early_points: int


@dataclass(frozen=True)
class AcceptanceCheck:
    name: str
    passed: bool
    detail: str = ""


def fit_linear_rate(values, upper=1e-1, lower=1e-8):
    """
    Fit log10(values) against the index over the converging segment.

    The segment runs from the first value at or below ``upper`` to the last
    value at or above ``lower``. Non-positive values end the segment.

    Returns
    -------
    LinearFit or None
        None when fewer than three points qualify.

    Example
    -------
    >>> fit = fit_linear_rate(0.5 ** np.arange(40))
    >>> round(fit.rate, 12), round(fit.r2, 12)
    (0.5, 1.0)
    """
    values = np.asarray(values, dtype=float)
    below = np.flatnonzero(values <= upper)
    if below.size == 0:
        return None
    start = below[0]
    segment = values[start:]
    bad = np.flatnonzero(~(segment >= lower) | ~np.isfinite(segment))
    stop = start + (bad[0] if bad.size else segment.size)
    if stop - start < 3:
        return None
    index = np.arange(start, stop)
    result = stats.linregress(index, np.log10(values[start:stop]))
    return LinearFit(float(10.0 ** result.slope), float(result.slope), float(result.intercept),
                     float(result.rvalue ** 2), int(stop - start))


def fit_two_phase(gaps, snr, floor_fraction=0.1, knee_factor=2.0):
    """
    Split a gap sequence into a log-linear early phase and a floor.

    The floor is the mean of the last ``floor_fraction`` of the sequence; the
    early phase ends where the gap first drops below ``knee_factor`` times the
    floor.
    """
    gaps = np.asarray(gaps, dtype=float)
    snr = np.asarray(snr, dtype=float)
    tail = max(1, int(len(gaps) * floor_fraction))
    floor = float(np.mean(gaps[-tail:]))
    knee = np.flatnonzero(gaps <= knee_factor * floor)
    end = int(knee[0]) if knee.size else len(gaps)
    end = max(end, 3)
    early = gaps[:end]
    valid = early > 0
    if valid.sum() < 3:
        return EnvelopeFit(float("nan"), float("nan"), float("nan"), floor, int(end))
    index = np.arange(end)[valid]
    result = stats.linregress(index, np.log10(early[valid]))
    rho = float(min(10.0 ** result.slope, 1.0 - 1e-12))
    steps = np.arange(len(gaps))
    excess = gaps - gaps[0] * rho ** steps
    weighted = np.where(np.isinf(snr), 0.0, np.clip(excess, 0.0, None) * snr)
    c = float(np.max(weighted)) if weighted.size else 0.0
    return EnvelopeFit(rho, c, float(result.rvalue ** 2), floor, int(end))


def theil_sen_drift(values, alpha=0.95):
    """
    Robust slope of ``values`` against the index.

    Returns
    -------
    tuple of float
        (slope, low, high); the drift is significantly negative when
        ``high < 0``.
    """
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size < 3:
        return float("nan"), float("nan"), float("nan")
    result = stats.theilslopes(values, np.arange(values.size), alpha=alpha)
    return float(result[0]), float(result[2]), float(result[3])


def _format_value(value):
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return str(value)
        return f"{value:.6g}"
    return str(value)


def _as_list(artifacts):
    if artifacts is None:
        return []
    if isinstance(artifacts, (list, tuple)):
        return list(artifacts)
    return [artifacts]


def emit_summary(artifacts, path=None):
    """
    Render a human-readable report of one or more artifact sets.

    Parameters
    ----------
    artifacts : ArtifactSet or list of ArtifactSet
    path : str or pathlib.Path, optional
        File to write the report to.

    Returns
    -------
    str
        The report text.

    Raises
    ------
    UsageError
        If there is nothing to report.
    """
    sets = [a for a in _as_list(artifacts) if not a.is_empty()]
    if not sets:
        raise UsageError("empty artifact set: nothing to summarize")

    lines = ["Artifact families:"]
    for family, description in ARTIFACT_FAMILIES.items():
        written = [str(a.files[family]) for a in sets if family in a.files]
        target = ", ".join(written) if written else "(not produced)"
        lines.append(f"  {family}: {description} -> {target}")
    lines.append("")

    for artifact in sets:
        lines.append(f"[{artifact.kind}] {artifact.name}")
        for key, value in artifact.metrics.items():
            lines.append(f"  {key} = {_format_value(value)}")
        if artifact.aborted:
            lines.append(f"  aborted runs ({len(artifact.aborted)}):")
            lines.extend(f"    {reason}" for reason in artifact.aborted)
        for check in artifact.checks:
            status = "PASS" if check.passed else "FAIL"
            lines.append(f"  {status} {check.name}: {check.detail}")
        lines.append("")

    failed = sum(1 for a in sets for c in a.checks if not c.passed)
    total = sum(len(a.checks) for a in sets)
    lines.append(f"Acceptance: {total - failed}/{total} checks passed")
    text = "\n".join(lines) + "\n"

    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        logger.info(f"Summary written to {path}")
    return text


def exit_code(artifacts):
    """0 when every acceptance check passed, 2 otherwise."""
    sets = _as_list(artifacts)
    return 0 if all(c.passed for a in sets for c in a.checks) else 2
