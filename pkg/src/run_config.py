# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Run-config file helpers.

A run config is a YAML document::

    version: 1
    problem:
      family: quadratic
      batch-size: 10
    solver:
      mode: gp-ls
      eps-f: 1.0e-3
      fd:
        interval: auto
    experiment:
      replications: 10
    output:
      path: results

``compare`` takes a ``solvers`` mapping of name to solver section instead of
``solver``. Keys are dashed; unknown keys are errors.
"""

import copy
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from constants import (
    CHEBYSHEV_LAMBDA,
    CONFIG_VERSION,
    DEFAULT_SOLVER_PARAMETERS,
    DIFFERENCE_TABLE_POINTS,
    REFERENCE_BATCH_SIZE,
    WORKERS_ENV_VAR,
)
from errors import InvalidConfigError
from finite_difference import FDConfig, optimal_interval
from noise import NOISE_METHODS
from solvers import SolverConfig, relaxation_from_noise
from stochastic import SurrogateSpec

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("csv", "jsonl")
SECTIONS = (
    "version",
    "problem",
    "solver",
    "solvers",
    "experiment",
    "noise",
    "diagnostics",
    "output",
)
_RENAMED_KEYS = {"lambda": "lam"}


def _default_workers() -> int:
    value = os.environ.get(WORKERS_ENV_VAR)
    if value is None:
        return 1
    try:
        return int(value)
    except ValueError:
        raise InvalidConfigError(f"{WORKERS_ENV_VAR} must be an integer, got '{value}'.")


@dataclass
class ExperimentConfig:
    """Replications, budget and parallelism."""

    replications: int = 1
    effort_budget: Optional[int] = None
    workers: int = field(default_factory=_default_workers)
    reference_batch_size: int = REFERENCE_BATCH_SIZE


@dataclass
class NoiseConfig:
    """Settings of the ``estimate-noise`` subcommand."""

    method: str = "pointwise-std"
    points: int = 10
    samples: int = 1000
    reference_batch_size: int = 10000
    lam: int = CHEBYSHEV_LAMBDA
    spacing: float = 1e-2
    table_points: int = DIFFERENCE_TABLE_POINTS
    location: Optional[list] = None


@dataclass
class DiagnosticsConfig:
    """Noise bound and Lipschitz constant used by ``diagnose``."""

    eps_b: float = 0.0
    lipschitz: Optional[float] = None


@dataclass
class OutputConfig:
    """Where and how results are written."""

    path: str = "results"
    format: str = "csv"


@dataclass
class RunConfig:
    """A fully validated run configuration."""

    problem: SurrogateSpec
    solvers: Dict[str, SolverConfig]
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def solver(self) -> SolverConfig:
        """Return the only solver of a single-solver config."""
        if len(self.solvers) != 1:
            raise InvalidConfigError(
                f"Expected a single solver, the config defines {sorted(self.solvers)}."
            )
        return next(iter(self.solvers.values()))

    def as_dict(self) -> Dict[str, Any]:
        """Return the config as dashed-key plain data, the way it is written in YAML."""
        return _dashed(
            {
                "version": CONFIG_VERSION,
                "problem": asdict(self.problem),
                "solvers": {name: asdict(cfg) for name, cfg in self.solvers.items()},
                "experiment": asdict(self.experiment),
                "noise": asdict(self.noise),
                "diagnostics": asdict(self.diagnostics),
                "output": asdict(self.output),
            }
        )


def _dashed(data):
    if isinstance(data, dict):
        renamed = {v: k for k, v in _RENAMED_KEYS.items()}
        return {renamed.get(k, k.replace("_", "-")): _dashed(v) for k, v in data.items()}
    return data


def _coerce(value, kind, key: str):
    """Coerce YAML scalars; PyYAML reads ``1e-3`` as a string."""
    if value is None:
        return None
    try:
        if kind in (float, Optional[float]):
            return float(value)
        if kind in (int, Optional[int]):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(float(value))
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError
    except (TypeError, ValueError):
        raise InvalidConfigError(f"Invalid value {value!r} for '{key}'.")
    return value


def _build(cls, section: Optional[dict], where: str, **extra):
    """Instantiate a config dataclass from a dashed-key mapping."""
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise InvalidConfigError(f"Section '{where}' must be a mapping.")
    known = {f.name: f for f in fields(cls) if f.init}
    kwargs = {}
    for key, value in section.items():
        name = _RENAMED_KEYS.get(key, str(key).replace("-", "_"))
        if name not in known:
            raise InvalidConfigError(f"Unknown key '{key}' in section '{where}'.")
        kwargs[name] = _coerce(value, known[name].type, f"{where}.{key}")
    kwargs.update(extra)
    return cls(**kwargs)


def _fd_config(section: Optional[dict], eps_f: Optional[float], lipschitz: float) -> FDConfig:
    section = dict(section or {"interval": "auto"})
    if section.get("interval", "auto") == "auto":
        if eps_f is None:
            raise InvalidConfigError("An 'auto' FD interval needs the solver's 'eps-f'.")
        section["interval"] = optimal_interval(eps_f, lipschitz)
    return _build(FDConfig, section, "solver.fd")


def _solver_config(
    section: Optional[dict], where: str, problem: SurrogateSpec, experiment: ExperimentConfig
) -> SolverConfig:
    user = dict(section or {})
    params = {**DEFAULT_SOLVER_PARAMETERS, **user}

    eps_f = _coerce(params.get("eps-f"), Optional[float], f"{where}.eps-f")
    if "eps-A" not in user and eps_f is not None:
        lam = _coerce(params["lambda"], float, f"{where}.lambda")
        params["eps-A"] = relaxation_from_noise(eps_f, lam)

    fd = params.pop("fd", None)
    fd_config = None
    if params["gradient-source"] == "finite-difference":
        fd_config = _fd_config(fd, eps_f, problem.lipschitz)
    elif fd is not None:
        raise InvalidConfigError(f"Section '{where}.fd' needs gradient-source finite-difference.")

    return _build(
        SolverConfig,
        params,
        where,
        fd=fd_config,
        effort_budget=experiment.effort_budget,
        reference_batch_size=experiment.reference_batch_size,
    )


def parse_run_config(data: Any, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Validate a loaded YAML document and apply CLI overrides."""
    if not isinstance(data, dict):
        raise InvalidConfigError("A run config must be a mapping.")
    data = copy.deepcopy(data)
    overrides = overrides or {}

    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise InvalidConfigError(f"Unknown section(s) {unknown}.")
    if data.get("version") != CONFIG_VERSION:
        raise InvalidConfigError(
            f"Unsupported config version {data.get('version')!r}, expected {CONFIG_VERSION}."
        )
    if "solver" in data and "solvers" in data:
        raise InvalidConfigError("Give either 'solver' or 'solvers', not both.")

    seed = overrides.get("seed")
    problem_section = dict(data.get("problem") or {})
    if seed is not None:
        problem_section["seed"] = seed
    problem = _build(SurrogateSpec, problem_section, "problem")

    experiment = _build(ExperimentConfig, data.get("experiment"), "experiment")
    if experiment.replications < 1:
        raise InvalidConfigError(f"Replications must be >= 1, got {experiment.replications}.")
    if experiment.workers < 1:
        raise InvalidConfigError(f"Workers must be >= 1, got {experiment.workers}.")

    if "solvers" in data:
        sections = data["solvers"]
        if not isinstance(sections, dict) or not sections:
            raise InvalidConfigError("Section 'solvers' must be a non-empty mapping.")
    else:
        sections = {"solver": data.get("solver")}
    solvers = {}
    for name, section in sections.items():
        where = "solver" if "solvers" not in data else f"solvers.{name}"
        if section is not None and not isinstance(section, dict):
            raise InvalidConfigError(f"Section '{where}' must be a mapping.")
        section = dict(section or {})
        if seed is not None:
            section["seed"] = seed
        cfg = _solver_config(section, where, problem, experiment)
        solvers[str(name) if "solvers" in data else cfg.mode] = cfg

    noise = _build(NoiseConfig, data.get("noise"), "noise")
    if noise.method not in NOISE_METHODS:
        raise InvalidConfigError(f"Unknown noise method '{noise.method}'.")

    output_section = dict(data.get("output") or {})
    for key in ("out", "format"):
        if overrides.get(key) is not None:
            output_section["path" if key == "out" else key] = overrides[key]
    output = _build(OutputConfig, output_section, "output")
    if output.format not in OUTPUT_FORMATS:
        raise InvalidConfigError(f"Unknown output format '{output.format}'.")

    return RunConfig(
        problem=problem,
        solvers=solvers,
        experiment=experiment,
        noise=noise,
        diagnostics=_build(DiagnosticsConfig, data.get("diagnostics"), "diagnostics"),
        output=output,
    )


def load_run_config(
    path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Read and validate a YAML run config."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigError(f"Config file '{path}' does not exist.")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise InvalidConfigError(f"Config file '{path}' is not valid YAML: {e}")
    config = parse_run_config(data, overrides)
    logger.debug(f"## Loaded run config {path} with solvers {sorted(config.solvers)}.")
    return config


def replication_config(config: RunConfig, name: str, index: int):
    """Return the problem spec and solver config of replication ``index``."""
    problem = replace(config.problem, seed=config.problem.seed + index)
    solver = config.solvers[name]
    return problem, replace(solver, seed=solver.seed + index)
