# -*- coding: utf-8 -*-
"""
Experiment Settings

Declarative experiment protocols. One YAML file describes one experiment:
the system (preset, inline matrices or a seeded random draw), actuation
modes, weights, noise levels, pre-collection length, solver parameters,
reference and Monte Carlo layout. ``ExperimentConfig.from_yaml`` parses and
validates it; validation errors point at the offending line.

Exposed Methods:
    ExperimentConfig.from_yaml, ExperimentConfig.from_dict
"""
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from .deepo import PRECONDITIONERS, SolverConfig
from .exceptions import ConfigError, DeePOError
from .lti_core import (
    ActuationMode,
    CostWeights,
    LtiSystem,
    NoiseModel,
    ReferenceKind,
    ReferenceSignal,
    benchmark_reference,
    benchmark_system,
    random_stable_system,
)
from .utils import as_matrix

logger = logging.getLogger("deepo_lqt")

TOP_LEVEL_KEYS = {
    "name", "seed", "system", "actuation", "under_inputs", "weights", "noise",
    "precollect", "solver", "eta_h_sweep", "rollout_horizon", "online_horizon",
    "offline_iters", "offline_preconditioner", "online_actuation", "runs", "workers",
    "reference", "output", "noise_bound",
}
SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
NOISE_KEYS = {"process_std", "exploration_std", "precollect_std"}


def _key_lines(text):
    """Map dotted key paths to 1-based YAML line numbers."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
                lines[path] = key_node.start_mark.line + 1
                walk(value_node, path)

    root = yaml.compose(text, Loader=yaml.SafeLoader)
    if root is not None:
        walk(root, "")
    return lines


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """
    A complete experiment protocol.

    Attributes
    ----------
    name : str
        Used in artifact names.
    seed : int
        Master seed; run ``r`` draws from an independent stream derived from it.
    system : str
        ``benchmark``, ``inline`` or ``random``.
    actuation : tuple of ActuationMode
        Modes to run. ``under`` keeps the first ``under_inputs`` columns of B.
    precollect : int
        Number of pre-collected Gaussian-input samples T.
    solver : SolverConfig
        Base solver parameters; ``offline_iters`` caps offline solves.
    offline_preconditioner : str
        Step geometry of offline solves, ``natural`` or ``none``.
    online_actuation : tuple of ActuationMode, optional
        Modes the online experiment runs; defaults to ``actuation``.
    eta_h_sweep : tuple of float
        H-block step multipliers swept by the online experiment.
    reference : ReferenceSignal
    output : pathlib.Path
        Directory artifacts are written to.
    """
    name: str = "experiment"
    seed: int = 0
    system: str = "benchmark"
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    random_system: dict = field(default_factory=dict)
    actuation: Tuple[ActuationMode, ...] = (ActuationMode.FULL, ActuationMode.UNDER)
    under_inputs: int = 2
    Q: object = 1.0
    R: object = 0.01
    process_std: float = 0.1
    exploration_std: float = 1.0
    precollect_std: Optional[float] = None
    precollect: int = 9
    solver: SolverConfig = field(default_factory=SolverConfig)
    offline_iters: int = 10000
    offline_preconditioner: str = "natural"
    online_actuation: Optional[Tuple[ActuationMode, ...]] = None
    eta_h_sweep: Tuple[float, ...] = (1.0, 5.0, 10.0, 50.0)
    rollout_horizon: int = 3000
    online_horizon: int = 3000
    runs: int = 10
    workers: int = 1
    reference: Optional[ReferenceSignal] = None
    output: Path = Path("artifacts")
    noise_bound: Optional[float] = None
    source: Optional[str] = None

    @classmethod
    def from_yaml(cls, config_path):
        """
        Load and validate an experiment from a YAML file.

        Parameters
        ----------
        config_path : str or pathlib.Path

        Returns
        -------
        ExperimentConfig

        Raises
        ------
        ConfigError
            On unreadable files, YAML syntax errors or invalid values; the
            message is prefixed with ``path:line``.
        """
        config_path = Path(config_path)
        try:
            text = config_path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}", path=str(config_path))
        try:
            data = yaml.safe_load(text)
            lines = _key_lines(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            problem = getattr(e, "problem", e)
            raise ConfigError(f"invalid YAML: {problem}", path=str(config_path), line=line)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping", path=str(config_path), line=1)
        config = cls.from_dict(data, path=str(config_path), lines=lines)
        logger.info(f"Loaded experiment '{config.name}' from {config_path}")
        return config

    @classmethod
    def from_dict(cls, data, path=None, lines=None):
        """Build a config from already-parsed mapping data."""
        return _Parser(data, path, lines or {}).parse(cls)

    def with_overrides(self, seed=None, output=None, runs=None):
        """Copy with command-line overrides applied."""
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output is not None:
            changes["output"] = Path(output)
        if runs is not None:
            if runs < 1:
                raise ConfigError("runs must be >= 1", path=self.source)
            changes["runs"] = int(runs)
        return replace(self, **changes)

    def base_system(self):
        """The fully actuated system of this protocol."""
        if self.system == "benchmark":
            return benchmark_system(ActuationMode.FULL)
        if self.system == "inline":
            return LtiSystem(self.A, self.B)
        params = self.random_system
        rng = np.random.Generator(np.random.Philox(params.get("seed", self.seed)))
        return random_stable_system(params["n"], params["m"], rng, params.get("radius", 0.9))

    def systems(self):
        """Mapping of each configured actuation mode to its system."""
        base = self.base_system()
        out = {}
        for mode in self.actuation:
            if mode is ActuationMode.FULL:
                out[mode] = base
            else:
                out[mode] = LtiSystem(base.A, base.B[:, :self.under_inputs])
        return out

    def weights_for(self, sys):
        """Q and R sized for ``sys``; scalars mean multiples of the identity."""
        Q = self.Q * np.eye(sys.n) if np.isscalar(self.Q) else np.asarray(self.Q, dtype=float)
        R = self.R * np.eye(sys.m) if np.isscalar(self.R) else np.asarray(self.R, dtype=float)
        if R.shape == (self.base_system().m,) * 2 and sys.m < R.shape[0]:
            R = R[:sys.m, :sys.m]
        try:
            weights = CostWeights(Q, R)
            weights.check(sys)
        except DeePOError as e:
            raise ConfigError(f"weights: {e}", path=self.source)
        return weights

    def run_seed(self, run):
        """Independent integer seed of Monte Carlo run ``run``."""
        return int(np.random.SeedSequence([self.seed, run]).generate_state(1)[0])

    def noise_for(self, run):
        return NoiseModel(self.process_std, self.exploration_std, self.run_seed(run),
                          self.precollect_std)

    def reference_signal(self):
        return benchmark_reference() if self.reference is None else self.reference

    def offline_solver(self):
        return self.solver.updated(max_iters=self.offline_iters,
                                   preconditioner=self.offline_preconditioner)

    def online_modes(self):
        """Actuation modes of the online experiment, a subset of ``actuation``."""
        if self.online_actuation is None:
            return self.actuation
        return tuple(m for m in self.actuation if m in self.online_actuation)

    def __repr__(self):
        return f"<ExperimentConfig(name='{self.name}', system='{self.system}', runs={self.runs})>"


class _Parser:
    """Validating walk over the raw mapping; every failure names its YAML line."""

    def __init__(self, data, path, lines):
        self.data = data
        self.path = path
        self.lines = lines

    def fail(self, key, message):
        raise ConfigError(f"{key}: {message}", path=self.path, line=self.lines.get(key))

    def check_keys(self, mapping, allowed, prefix):
        if not isinstance(mapping, dict):
            self.fail(prefix, "must be a mapping")
        for key in mapping:
            if key not in allowed:
                dotted = f"{prefix}.{key}" if prefix else key
                self.fail(dotted, f"unknown key (expected one of {sorted(allowed)})")

    def number(self, mapping, key, dotted, default, kind=float, minimum=None):
        value = mapping.get(key, default)
        if value is None:
            return None
        try:
            value = kind(value)
        except (TypeError, ValueError):
            self.fail(dotted, f"expected {kind.__name__}, got {value!r}")
        if minimum is not None and value < minimum:
            self.fail(dotted, f"must be >= {minimum}, got {value}")
        return value

    def matrix(self, value, dotted):
        try:
            return as_matrix(value, dotted)
        except (DeePOError, TypeError, ValueError) as e:
            self.fail(dotted, str(e))

    def weight(self, value, dotted):
        if np.isscalar(value):
            try:
                value = float(value)
            except (TypeError, ValueError):
                self.fail(dotted, f"expected a number or matrix, got {value!r}")
            if value <= 0:
                self.fail(dotted, "must be positive")
            return value
        return self.matrix(value, dotted)

    def parse(self, cls):
        data = self.data
        self.check_keys(data, TOP_LEVEL_KEYS, "")
        kwargs = {"source": self.path}
        if "name" in data:
            kwargs["name"] = str(data["name"])
        kwargs["seed"] = self.number(data, "seed", "seed", 0, int, 0)
        kwargs.update(self.parse_system(data.get("system", {"preset": "benchmark"})))

        kwargs["actuation"] = self.modes(data.get("actuation", ["full", "under"]), "actuation")
        if "online_actuation" in data:
            kwargs["online_actuation"] = self.modes(data["online_actuation"], "online_actuation")
        kwargs["under_inputs"] = self.number(data, "under_inputs", "under_inputs", 2, int, 1)

        weights = data.get("weights", {})
        self.check_keys(weights, {"Q", "R"}, "weights")
        if "Q" in weights:
            kwargs["Q"] = self.weight(weights["Q"], "weights.Q")
        if "R" in weights:
            kwargs["R"] = self.weight(weights["R"], "weights.R")

        noise = data.get("noise", {})
        self.check_keys(noise, NOISE_KEYS, "noise")
        kwargs["process_std"] = self.number(noise, "process_std", "noise.process_std",
                                            0.1, float, 0.0)
        kwargs["exploration_std"] = self.number(noise, "exploration_std", "noise.exploration_std",
                                                1.0, float, 0.0)
        kwargs["precollect_std"] = self.number(noise, "precollect_std", "noise.precollect_std",
                                               None, float, 0.0)

        kwargs["precollect"] = self.number(data, "precollect", "precollect", 9, int, 0)
        kwargs["offline_iters"] = self.number(data, "offline_iters", "offline_iters", 10000, int, 1)
        preconditioner = data.get("offline_preconditioner", "natural")
        if preconditioner not in PRECONDITIONERS:
            self.fail("offline_preconditioner",
                      f"must be one of {list(PRECONDITIONERS)}, got {preconditioner!r}")
        kwargs["offline_preconditioner"] = preconditioner
        kwargs["rollout_horizon"] = self.number(data, "rollout_horizon", "rollout_horizon",
                                                3000, int, 1)
        kwargs["online_horizon"] = self.number(data, "online_horizon", "online_horizon",
                                               3000, int, 1)
        kwargs["runs"] = self.number(data, "runs", "runs", 10, int, 1)
        kwargs["workers"] = self.number(data, "workers", "workers", 1, int, 1)
        kwargs["noise_bound"] = self.number(data, "noise_bound", "noise_bound", None, float, 0.0)

        solver = data.get("solver", {})
        self.check_keys(solver, SOLVER_KEYS, "solver")
        try:
            kwargs["solver"] = SolverConfig(**solver)
        except (TypeError, ValueError) as e:
            self.fail("solver", str(e))

        sweep = data.get("eta_h_sweep", [1, 5, 10, 50])
        try:
            sweep = tuple(float(v) for v in sweep)
        except (TypeError, ValueError):
            self.fail("eta_h_sweep", f"expected a list of numbers, got {sweep!r}")
        if not sweep or min(sweep) < 1:
            self.fail("eta_h_sweep", "entries must be >= 1")
        kwargs["eta_h_sweep"] = sweep

        if "reference" in data:
            kwargs["reference"] = self.parse_reference(data["reference"])
        if "output" in data:
            kwargs["output"] = Path(str(data["output"]))

        config = cls(**kwargs)
        self.validate(config)
        return config

    def modes(self, value, dotted):
        if isinstance(value, str):
            value = [value]
        try:
            return tuple(ActuationMode(m) for m in value)
        except (TypeError, ValueError):
            self.fail(dotted, f"modes must be 'full' or 'under', got {value!r}")

    def parse_system(self, node):
        if not isinstance(node, dict):
            self.fail("system", "must be a mapping")
        if "preset" in node:
            self.check_keys(node, {"preset"}, "system")
            if node["preset"] != "benchmark":
                self.fail("system.preset", f"unknown preset {node['preset']!r}")
            return {"system": "benchmark"}
        if "random" in node:
            self.check_keys(node, {"random"}, "system")
            params = node["random"]
            self.check_keys(params, {"n", "m", "seed", "radius"}, "system.random")
            out = {
                "n": self.number(params, "n", "system.random.n", None, int, 1),
                "m": self.number(params, "m", "system.random.m", None, int, 1),
            }
            if out["n"] is None or out["m"] is None:
                self.fail("system.random", "n and m are required")
            if "seed" in params:
                out["seed"] = self.number(params, "seed", "system.random.seed", 0, int, 0)
            radius = self.number(params, "radius", "system.random.radius", 0.9, float, 0.0)
            if radius >= 1:
                self.fail("system.random.radius", "must be < 1")
            out["radius"] = radius
            return {"system": "random", "random_system": out}
        self.check_keys(node, {"A", "B"}, "system")
        if "A" not in node or "B" not in node:
            self.fail("system", "needs 'preset', 'random' or both 'A' and 'B'")
        A = self.matrix(node["A"], "system.A")
        B = self.matrix(node["B"], "system.B")
        try:
            LtiSystem(A, B)
        except DeePOError as e:
            self.fail("system", str(e))
        return {"system": "inline", "A": A, "B": B}

    def parse_reference(self, node):
        if not isinstance(node, dict):
            self.fail("reference", "must be a mapping")
        if node.get("preset") == "benchmark":
            self.check_keys(node, {"preset"}, "reference")
            return benchmark_reference()
        try:
            kind = ReferenceKind(node.get("kind"))
        except ValueError:
            self.fail("reference.kind",
                      f"expected constant, sinusoid_mix or table, got {node.get('kind')!r}")
        bound = self.number(node, "bound", "reference.bound", None, float, 0.0)
        try:
            if kind is ReferenceKind.CONSTANT:
                self.check_keys(node, {"kind", "value", "bound"}, "reference")
                return ReferenceSignal.constant(node["value"], bound=bound)
            if kind is ReferenceKind.SINUSOID_MIX:
                allowed = {"kind", "amplitude", "frequency", "phase", "slope", "offset", "bound"}
                self.check_keys(node, allowed, "reference")
                return ReferenceSignal.sinusoid_mix(
                    node["amplitude"], node["frequency"], slope=node.get("slope"),
                    offset=node.get("offset"), phase=node.get("phase"), bound=bound,
                )
            self.check_keys(node, {"kind", "file", "values", "bound"}, "reference")
            if "file" in node:
                table_path = Path(str(node["file"]))
                if self.path is not None and not table_path.is_absolute():
                    table_path = Path(self.path).parent / table_path
                if not table_path.exists():
                    self.fail("reference.file", f"file not found: {table_path}")
                values = pd.read_csv(table_path, float_precision="round_trip").to_numpy(dtype=float)
            else:
                values = node["values"]
            return ReferenceSignal.from_table(values, bound=bound)
        except ConfigError:
            raise
        except KeyError as e:
            self.fail("reference", f"missing parameter {e}")
        except (DeePOError, TypeError, ValueError) as e:
            self.fail("reference", str(e))

    def validate(self, config):
        base = config.base_system()
        if ActuationMode.UNDER in config.actuation and config.under_inputs >= base.m:
            self.fail("under_inputs", f"must be < m={base.m} for an underactuated run")
        online = config.online_actuation
        if online is not None and (not online or not set(online) <= set(config.actuation)):
            self.fail("online_actuation", "must be a non-empty subset of actuation")
        if config.reference is None and config.system != "benchmark":
            self.fail("reference", "required unless the benchmark system preset is used")
        ref = config.reference_signal()
        if ref.dim != base.n:
            self.fail("reference", f"dimension {ref.dim} does not match n={base.n}")
        for sys in config.systems().values():
            config.weights_for(sys)
        if ref.kind is ReferenceKind.TABLE:
            needed = max(config.rollout_horizon, config.precollect + config.online_horizon
                         + config.solver.preview_horizon + 1)
            if ref.table.shape[0] < needed:
                self.fail("reference", f"table has {ref.table.shape[0]} rows, needs {needed}")
