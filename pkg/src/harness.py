# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""This module provides the ExperimentManager."""

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from constants import MOVING_AVERAGE_WINDOW, RESULTS_COLUMNS, SUMMARY_COLUMNS
from diagnostics import TheoryConstants, replay_inequalities, verify_neighborhood
from errors import DivergedError, InvalidConfigError, InvalidInputError, UnsupportedOperationError
from finite_difference import fd_gradient_error_bound
from noise import (
    NoiseEstimate,
    chebyshev_bound,
    difference_table_noise,
    global_noise_level,
    max_abs_bound,
    noise_deltas,
    pointwise_noise_level,
    random_direction,
    range_bound,
)
from run_config import RunConfig, replication_config
from solvers import IterationRecord, SolverConfig, solve
from stochastic import SurrogateProblem, SurrogateSpec, make_surrogate_problem

logger = logging.getLogger(__name__)

ITERATE_COLUMNS = ("replication", "k", "x", "x_next", "gradient", "alpha0", "eps_A", "cap_hit")


def moving_average(series: Sequence[float], window: int = MOVING_AVERAGE_WINDOW) -> np.ndarray:
    """Return the trailing mean; the first window - 1 entries average the available prefix."""
    if window < 1:
        raise InvalidConfigError(f"Window must be >= 1, got {window}.")
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        return values
    sums = np.cumsum(np.insert(values, 0, 0.0))
    ends = np.arange(1, values.size + 1)
    starts = np.maximum(ends - window, 0)
    return (sums[ends] - sums[starts]) / (ends - starts)


def _format_value(value) -> str:
    """Return a CSV cell; floats use repr so reruns are byte-identical."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _plain(value):
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def render_rows(rows: List[Dict[str, Any]], columns: Sequence[str], fmt: str) -> str:
    """Render rows as CSV (with header) or JSONL, with fields in column order."""
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_value(row.get(column)) for column in columns])
        return buffer.getvalue()
    if fmt == "jsonl":
        return "".join(
            json.dumps({column: _plain(row.get(column)) for column in columns}) + "\n"
            for row in rows
        )
    raise InvalidConfigError(f"Unknown output format '{fmt}'.")


@dataclass
class ReplicationResult:
    """Trace of one replication, and the divergence message if it diverged."""

    replication: int
    trace: List[IterationRecord]
    diverged: Optional[str] = None


def run_replication(
    problem_spec: SurrogateSpec, solver_cfg: SolverConfig, replication: int
) -> ReplicationResult:
    """Build a fresh problem and solve it; each replication owns its oracle."""
    problem = make_surrogate_problem(problem_spec)
    try:
        trace = solve(problem.oracle, problem.region, problem.x0, solver_cfg)
    except DivergedError as e:
        return ReplicationResult(replication, e.trace, e.message)
    return ReplicationResult(replication, trace)


@dataclass
class ResultsTable:
    """Per-iteration rows of every replication, sorted by (replication, k)."""

    solver: str
    results: List[ReplicationResult] = field(default_factory=list)

    def __post_init__(self):
        self.results = sorted(self.results, key=lambda result: result.replication)

    @property
    def rows(self) -> List[Dict[str, Any]]:
        """Return the flattened rows in RESULTS_COLUMNS."""
        return [
            {
                "replication": result.replication,
                "k": record.k,
                "f_noisy": record.f_noisy,
                "f_reference": record.f_reference,
                "beta": record.beta,
                "backtracks": record.backtracks,
                "stationarity": record.stationarity,
                "effort": record.effort,
                "eps_A": record.eps_A_used,
                "alpha0": record.alpha0_used,
            }
            for result in self.results
            for record in result.trace
        ]

    @property
    def iterate_rows(self) -> List[Dict[str, Any]]:
        """Return the iterates and noisy gradients consumed by ``diagnose``."""
        return [
            {
                "replication": result.replication,
                "k": record.k,
                "x": record.x,
                "x_next": record.x_next,
                "gradient": record.gradient,
                "alpha0": record.alpha0_used,
                "eps_A": record.eps_A_used,
                "cap_hit": record.cap_hit,
            }
            for result in self.results
            for record in result.trace
        ]

    @property
    def diverged(self) -> Dict[int, str]:
        """Return the divergence message of each diverged replication."""
        return {r.replication: r.diverged for r in self.results if r.diverged is not None}

    def objective_series(self, replication: int) -> np.ndarray:
        """Return f_reference per iteration, or f_noisy when no reference was taken."""
        trace = next(r.trace for r in self.results if r.replication == replication)
        return np.array(
            [r.f_noisy if r.f_reference is None else r.f_reference for r in trace], dtype=float
        )

    def summary(self, window: int = MOVING_AVERAGE_WINDOW) -> Dict[str, Any]:
        """Return the medians over replications of the final moving average and effort."""
        finals = [
            moving_average(self.objective_series(r.replication), window)[-1]
            for r in self.results
            if r.trace
        ]
        efforts = [r.trace[-1].effort for r in self.results if r.trace]
        return {
            "solver": self.solver,
            "replications": len(self.results),
            "diverged": len(self.diverged),
            "final_moving_average": float(np.median(finals)) if finals else None,
            "final_effort": float(np.median(efforts)) if efforts else None,
            "total_backtracks": sum(rec.backtracks for r in self.results for rec in r.trace),
            "cap_hits": sum(rec.cap_hit for r in self.results for rec in r.trace),
        }

    def render(self, fmt: str) -> str:
        """Render the rows."""
        return render_rows(self.rows, RESULTS_COLUMNS, fmt)

    def write(self, path: Path, fmt: str) -> None:
        """Write the rows, and the iterates next to them."""
        path.write_text(self.render(fmt))
        path.with_suffix(".iterates.jsonl").write_text(
            render_rows(self.iterate_rows, ITERATE_COLUMNS, "jsonl")
        )


def read_iterates(path: Path) -> Dict[int, List[IterationRecord]]:
    """Read an iterates file back into per-replication partial records."""
    if not path.is_file():
        raise InvalidConfigError(f"Iterates file '{path}' does not exist.")
    traces: Dict[int, List[IterationRecord]] = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            record = IterationRecord(
                k=int(row["k"]),
                x=np.asarray(row["x"], dtype=float),
                x_next=np.asarray(row["x_next"], dtype=float),
                gradient=np.asarray(row["gradient"], dtype=float),
                f_noisy=float("nan"),
                beta=float("nan"),
                backtracks=0,
                stationarity=float("nan"),
                effort=0,
                eps_A_used=float(row["eps_A"]),
                alpha0_used=float(row["alpha0"]),
                cap_hit=bool(row["cap_hit"]),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise InvalidInputError(f"Malformed iterates line {number} in '{path}': {e}")
        traces.setdefault(int(row["replication"]), []).append(record)
    return traces


class ExperimentManager:
    """Runs replications, estimates noise and checks traces for one run config."""

    def __init__(self, config: RunConfig):
        self._config = config

    @property
    def config(self) -> RunConfig:
        """Return the run config."""
        return self._config

    def run_experiment(self, name: Optional[str] = None) -> ResultsTable:
        """Run every replication of one solver and return the merged table."""
        name = name or next(iter(self._config.solvers))
        replications = self._config.experiment.replications
        jobs = [replication_config(self._config, name, i) for i in range(replications)]
        workers = min(self._config.experiment.workers, replications)
        logger.info(f"Running {replications} replication(s) of '{name}' on {workers} worker(s).")

        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(
                    pool.map(
                        run_replication,
                        [problem for problem, _ in jobs],
                        [solver for _, solver in jobs],
                        range(replications),
                    )
                )
        else:
            results = [
                run_replication(problem, solver, i) for i, (problem, solver) in enumerate(jobs)
            ]

        table = ResultsTable(name, results)
        for replication, message in table.diverged.items():
            logger.warning(f"Replication {replication} of '{name}' diverged: {message}")
        return table

    def compare(self) -> Dict[str, ResultsTable]:
        """Run every configured solver."""
        return {name: self.run_experiment(name) for name in self._config.solvers}

    def output_dir(self) -> Path:
        """Return the output directory, creating it."""
        path = Path(self._config.output.path)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_solve(self, table: ResultsTable) -> Path:
        """Write ``results.<fmt>`` and ``results.iterates.jsonl``."""
        fmt = self._config.output.format
        target = self.output_dir() / f"results.{fmt}"
        table.write(target, fmt)
        return target

    def write_compare(self, tables: Dict[str, ResultsTable]) -> Path:
        """Write one table per solver plus ``summary.<fmt>``."""
        fmt = self._config.output.format
        out = self.output_dir()
        for name, table in tables.items():
            table.write(out / f"{name}.{fmt}", fmt)
        target = out / f"summary.{fmt}"
        target.write_text(
            render_rows([t.summary() for t in tables.values()], SUMMARY_COLUMNS, fmt)
        )
        return target

    def estimate_noise(self, method: Optional[str] = None) -> NoiseEstimate:
        """Run the configured noise estimator on the configured problem."""
        noise = self._config.noise
        method = method or noise.method
        problem = make_surrogate_problem(self._config.problem)
        oracle, region = problem.oracle, problem.region
        rng = np.random.default_rng(self._config.problem.seed)
        x = problem.x0 if noise.location is None else np.asarray(noise.location, dtype=float)
        if not region.contains(x):
            raise InvalidInputError("The noise-estimation location lies outside the bounds.")
        logger.info(f"Estimating noise with '{method}' on {oracle.name}.")

        if method == "pointwise-std":
            return pointwise_noise_level(oracle.evaluate_many(x, noise.samples), x)
        if method in ("global-average", "global-min"):
            per_point = [
                pointwise_noise_level(oracle.evaluate_many(point, noise.samples), point)
                for point in (region.sample(rng) for _ in range(noise.points))
            ]
            aggregate = "mean" if method == "global-average" else "min"
            return global_noise_level(per_point, aggregate)
        if method == "range":
            return range_bound(oracle.evaluate_many(x, noise.samples), x)
        if method in ("chebyshev", "max-abs"):
            f_hat = oracle.reference_value(
                x, self._config.problem.seed, 0, noise.reference_batch_size
            )
            deltas = noise_deltas(oracle.evaluate_many(x, noise.samples), f_hat)
            if method == "chebyshev":
                return chebyshev_bound(deltas, noise.lam, x)
            return max_abs_bound(deltas, x)
        if method == "difference-table":
            direction = random_direction(rng, region.dimension)
            return difference_table_noise(
                oracle, x, direction, noise.spacing, noise.table_points, region
            )
        raise InvalidConfigError(f"Unknown noise method '{method}'.")

    def theory_constants(
        self, trace: List[IterationRecord], problem: SurrogateProblem
    ) -> TheoryConstants:
        """Return the constants for a trace of the configured solver."""
        if problem.exact is None:
            raise UnsupportedOperationError(
                f"Diagnostics need an exact objective; '{self._config.problem.family}' has none."
            )
        cfg = self._config.solver
        L = self._config.diagnostics.lipschitz or problem.exact.lipschitz
        eps_b = self._config.diagnostics.eps_b
        if cfg.gradient_source == "finite-difference":
            assert cfg.fd is not None
            eps_g = fd_gradient_error_bound(eps_b, cfg.fd.interval, L, problem.region.dimension)
        else:
            eps_g = max(
                float(np.linalg.norm(r.gradient - problem.exact.gradient(r.x))) for r in trace
            )
        return TheoryConstants(cfg.alpha0, cfg.c, cfg.rho, L, eps_g, cfg.eps_A, eps_b)

    def diagnose(self, iterates: Path) -> Dict[str, Any]:
        """Verify the neighborhood bound and replay the inequalities for each replication."""
        problem = make_surrogate_problem(self._config.problem)
        traces = read_iterates(iterates)
        if not traces:
            raise InvalidInputError(f"Iterates file '{iterates}' is empty.")
        report: Dict[str, Any] = {}
        for replication, trace in sorted(traces.items()):
            constants = self.theory_constants(trace, problem)
            assert problem.exact is not None
            neighborhood = verify_neighborhood(trace, problem.exact, problem.region, constants)
            replay = replay_inequalities(trace, problem.exact, problem.region, constants)
            report[f"replication-{replication}"] = {
                "gamma-squared": constants.gamma_sq,
                "eps-bar": constants.eps_bar,
                "neighborhood": neighborhood.as_dict(),
                "inequalities-hold": replay.all_hold,
                "failures": replay.failures,
            }
        return report
