# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Gradient projection solvers: fixed step, relaxed line search, self-calibrated.

``solve`` drives one of three modes:

* ``gp-f``: x_{k+1} = P[x_k - alpha g~_k] with a fixed alpha (``alpha0``).
* ``gp-ls``: backtracking along p~_k = P[x_k - alpha0 g~_k] - x_k until the
  relaxed Armijo condition holds, capped at 60 backtracks.
* ``gp-ls-cal``: as gp-ls, with eps_A and alpha0 recalibrated every T
  iterations from the recent backtrack counts, and beta >= rho^(3T).
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, List, Optional, Tuple

import numpy as np
from constants import (
    CALIBRATION_ALPHA0_CEILING,
    CALIBRATION_ALPHA0_FLOOR,
    CALIBRATION_BACKTRACK_CAP_FACTOR,
    CALIBRATION_EPS_A_CAP_FACTOR,
    CALIBRATION_EPS_A_FLOOR,
    CALIBRATION_GROW,
    CALIBRATION_HIGH_BACKTRACKS,
    CALIBRATION_LOW_BACKTRACKS,
    CALIBRATION_SHRINK,
    DEFAULT_SOLVER_PARAMETERS,
    GP_LS_MAX_BACKTRACKS,
    REFERENCE_BATCH_SIZE,
)
from errors import DivergedError, InvalidConfigError, InvalidInputError
from finite_difference import FDConfig, fd_gradient
from geometry import BoxRegion, Vector, as_vector, search_direction, stationarity_measure
from stochastic import NoisyOracle

logger = logging.getLogger(__name__)

MODES = ("gp-f", "gp-ls", "gp-ls-cal")
GRADIENT_SOURCES = ("analytic", "finite-difference")


def relaxation_from_noise(eps_f: float, lam: float) -> float:
    """Return eps_A = lambda * eps_f with lambda in [1, 2]."""
    if not 1.0 <= lam <= 2.0:
        raise InvalidConfigError(f"lambda must lie in [1, 2], got {lam}.")
    if eps_f < 0:
        raise InvalidConfigError(f"Noise level must be >= 0, got {eps_f}.")
    return float(lam * eps_f)


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of one solver run."""

    mode: str = DEFAULT_SOLVER_PARAMETERS["mode"]
    alpha0: float = DEFAULT_SOLVER_PARAMETERS["alpha0"]
    rho: float = DEFAULT_SOLVER_PARAMETERS["rho"]
    c: float = DEFAULT_SOLVER_PARAMETERS["c"]
    eps_A: float = DEFAULT_SOLVER_PARAMETERS["eps-A"]
    lam: float = DEFAULT_SOLVER_PARAMETERS["lambda"]
    T: int = DEFAULT_SOLVER_PARAMETERS["T"]
    max_iterations: int = DEFAULT_SOLVER_PARAMETERS["max-iterations"]
    gradient_source: str = DEFAULT_SOLVER_PARAMETERS["gradient-source"]
    fd: Optional[FDConfig] = None
    seed: int = DEFAULT_SOLVER_PARAMETERS["seed"]
    eps_f: Optional[float] = None
    effort_budget: Optional[int] = None
    stationarity_tol: float = DEFAULT_SOLVER_PARAMETERS["stationarity-tol"]
    stationarity_patience: int = DEFAULT_SOLVER_PARAMETERS["stationarity-patience"]
    reference_batch_size: int = REFERENCE_BATCH_SIZE

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(
                f"Unknown solver mode '{self.mode}', expected one of {MODES}."
            )
        if not self.alpha0 > 0:
            raise InvalidConfigError(f"alpha0 must be positive, got {self.alpha0}.")
        if not 0 < self.rho < 1:
            raise InvalidConfigError(f"rho must lie in (0, 1), got {self.rho}.")
        if not 0 < self.c < 1:
            raise InvalidConfigError(f"c must lie in (0, 1), got {self.c}.")
        if self.eps_A < 0:
            raise InvalidConfigError(f"eps_A must be >= 0, got {self.eps_A}.")
        if not 1.0 <= self.lam <= 2.0:
            raise InvalidConfigError(f"lambda must lie in [1, 2], got {self.lam}.")
        if self.T < 1:
            raise InvalidConfigError(f"T must be >= 1, got {self.T}.")
        if self.max_iterations < 1:
            raise InvalidConfigError(f"max_iterations must be >= 1, got {self.max_iterations}.")
        if self.gradient_source not in GRADIENT_SOURCES:
            raise InvalidConfigError(
                f"Unknown gradient source '{self.gradient_source}', "
                f"expected one of {GRADIENT_SOURCES}."
            )
        if self.gradient_source == "finite-difference" and self.fd is None:
            raise InvalidConfigError("Finite-difference gradients need an FD configuration.")
        if self.mode == "gp-ls-cal" and not (self.eps_f is not None and self.eps_f > 0):
            raise InvalidConfigError("gp-ls-cal needs a positive reference noise level eps_f.")
        if self.effort_budget is not None and self.effort_budget < 1:
            raise InvalidConfigError(f"Effort budget must be >= 1, got {self.effort_budget}.")
        if self.stationarity_patience < 1:
            raise InvalidConfigError(
                f"Stationarity patience must be >= 1, got {self.stationarity_patience}."
            )
        if self.reference_batch_size < 0:
            raise InvalidConfigError(
                f"Reference batch size must be >= 0, got {self.reference_batch_size}."
            )
        if self.mode != "gp-f" and self.alpha0 + 2 * self.c >= 1:
            logger.warning(
                f"alpha0 + 2c = {self.alpha0 + 2 * self.c} >= 1: the neighborhood "
                "guarantee of the convergence theory does not apply to this run."
            )

    @property
    def consistent(self) -> bool:
        """Return True when each iteration pins one batch."""
        return (
            self.gradient_source == "finite-difference"
            and self.fd is not None
            and self.fd.sample_mode == "consistent"
        )

    @property
    def max_backtracks(self) -> int:
        """Return the hard backtrack cap of this mode."""
        if self.mode == "gp-ls-cal":
            return CALIBRATION_BACKTRACK_CAP_FACTOR * self.T
        return GP_LS_MAX_BACKTRACKS


@dataclass
class CalibrationState:
    """Current eps_A and alpha0 plus the sliding window of recent backtracks."""

    eps_A: float
    alpha0: float
    eps_f_ref: float
    window: Deque[int] = field(default_factory=deque)

    @classmethod
    def start(cls, cfg: SolverConfig) -> "CalibrationState":
        """Return the initial state of a gp-ls-cal run, clamped into the calibration box."""
        assert cfg.eps_f is not None
        state = cls(cfg.eps_A, cfg.alpha0, cfg.eps_f, deque(maxlen=cfg.T))
        state.clamp()
        if (state.eps_A, state.alpha0) != (cfg.eps_A, cfg.alpha0):
            logger.warning(
                f"Starting calibration at eps_A={state.eps_A}, alpha0={state.alpha0} "
                f"instead of eps_A={cfg.eps_A}, alpha0={cfg.alpha0}."
            )
        return state

    def clamp(self) -> None:
        """Pull eps_A into [1e-5, 2 eps_f] and alpha0 into [1e-5, 0.1]."""
        eps_A_cap = max(CALIBRATION_EPS_A_FLOOR, CALIBRATION_EPS_A_CAP_FACTOR * self.eps_f_ref)
        self.eps_A = float(np.clip(self.eps_A, CALIBRATION_EPS_A_FLOOR, eps_A_cap))
        self.alpha0 = float(
            np.clip(self.alpha0, CALIBRATION_ALPHA0_FLOOR, CALIBRATION_ALPHA0_CEILING)
        )

    def record(self, backtracks: int) -> None:
        """Push one backtrack count; the window is never reset."""
        self.window.append(int(backtracks))


@dataclass
class IterationRecord:
    """Trace entry for iteration k."""

    k: int
    x: Vector
    x_next: Vector
    gradient: Vector
    f_noisy: float
    beta: float
    backtracks: int
    stationarity: float
    effort: int
    eps_A_used: float
    alpha0_used: float
    f_reference: Optional[float] = None
    cap_hit: bool = False


def relaxed_armijo_accept(
    f_trial: float, f_base: float, beta: float, dir_dot_grad: float, c: float, eps_A: float
) -> bool:
    """Return True if f_trial <= f_base + c beta p^T g + 2 eps_A."""
    return bool(f_trial <= f_base + c * beta * dir_dot_grad + 2.0 * eps_A)


def calibration_update(cal: CalibrationState) -> CalibrationState:
    """Return the state after one calibration step.

    Many backtracks grow eps_A (capped at 2 eps_f) and shrink alpha0;
    almost none shrink eps_A and grow alpha0 (capped at 0.1).
    """
    updated = replace(cal, window=deque(cal.window, maxlen=cal.window.maxlen))
    if not cal.window:
        updated.clamp()
        return updated
    average = float(np.mean(cal.window))
    if average >= CALIBRATION_HIGH_BACKTRACKS:
        updated.eps_A = min(
            CALIBRATION_GROW * cal.eps_A, CALIBRATION_EPS_A_CAP_FACTOR * cal.eps_f_ref
        )
        updated.alpha0 = max(CALIBRATION_SHRINK * cal.alpha0, CALIBRATION_ALPHA0_FLOOR)
    elif average <= CALIBRATION_LOW_BACKTRACKS:
        updated.eps_A = max(CALIBRATION_SHRINK * cal.eps_A, CALIBRATION_EPS_A_FLOOR)
        updated.alpha0 = min(CALIBRATION_GROW * cal.alpha0, CALIBRATION_ALPHA0_CEILING)
    updated.clamp()
    logger.debug(
        f"## Calibration update: avg={average}, eps_A {cal.eps_A} -> {updated.eps_A}, "
        f"alpha0 {cal.alpha0} -> {updated.alpha0}"
    )
    return updated


def _check_finite(value, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise DivergedError(f"Non-finite {what} encountered.")


def _value_and_gradient(
    oracle: NoisyOracle,
    region: BoxRegion,
    x: Vector,
    gradient_source: str,
    fd: Optional[FDConfig],
) -> Tuple[float, Vector]:
    """Return f~(x) and g~(x); the FD gradient reuses f~(x) as its base."""
    if gradient_source == "analytic":
        f_base, g = oracle.value_and_gradient(x)
    else:
        if fd is None:
            raise InvalidConfigError("Finite-difference gradients need an FD configuration.")
        f_base = oracle.evaluate(x)
        g = fd_gradient(oracle, x, fd, region=region, f_base=f_base)
    _check_finite(f_base, "objective")
    _check_finite(g, "gradient")
    return f_base, g


def gp_f_step(
    oracle: NoisyOracle,
    region: BoxRegion,
    x: Vector,
    alpha: float,
    gradient_source: str = "analytic",
    fd: Optional[FDConfig] = None,
) -> Vector:
    """Return P[x - alpha g~(x)]."""
    x = as_vector(x, region.dimension)
    _, g = _value_and_gradient(oracle, region, x, gradient_source, fd)
    return region.project(x - alpha * g)


def _gp_f_iterate(
    oracle: NoisyOracle, region: BoxRegion, x: Vector, cfg: SolverConfig, k: int
) -> IterationRecord:
    f_base, g = _value_and_gradient(oracle, region, x, cfg.gradient_source, cfg.fd)
    d = search_direction(region, x, g, cfg.alpha0)
    return IterationRecord(
        k=k,
        x=x,
        x_next=region.project(x + d.direction),
        gradient=g,
        f_noisy=f_base,
        beta=1.0,
        backtracks=0,
        stationarity=stationarity_measure(d, g),
        effort=oracle.effort,
        eps_A_used=0.0,
        alpha0_used=cfg.alpha0,
    )


def gp_ls_iterate(
    oracle: NoisyOracle,
    region: BoxRegion,
    x: Vector,
    cfg: SolverConfig,
    cal: Optional[CalibrationState] = None,
    k: int = 0,
) -> IterationRecord:
    """Run one iteration of the relaxed line search gradient projection method."""
    alpha0 = cal.alpha0 if cal is not None else cfg.alpha0
    eps_A = cal.eps_A if cal is not None else cfg.eps_A
    x = as_vector(x, region.dimension)

    f_base, g = _value_and_gradient(oracle, region, x, cfg.gradient_source, cfg.fd)
    d = search_direction(region, x, g, alpha0)
    p = d.direction
    dot = float(p @ g)

    beta = 1.0
    backtracks = 0
    cap_hit = False
    # A zero direction satisfies the test at beta = 1 without a trial evaluation.
    while np.any(p):
        f_trial = oracle.evaluate(region.project(x + beta * p))
        _check_finite(f_trial, "objective")
        if relaxed_armijo_accept(f_trial, f_base, beta, dot, cfg.c, eps_A):
            break
        if backtracks == cfg.max_backtracks:
            cap_hit = True
            logger.warning(f"Backtrack cap {cfg.max_backtracks} hit at iteration {k}.")
            break
        beta *= cfg.rho
        backtracks += 1

    return IterationRecord(
        k=k,
        x=x,
        x_next=region.project(x + beta * p),
        gradient=g,
        f_noisy=f_base,
        beta=beta,
        backtracks=backtracks,
        stationarity=-dot,
        effort=oracle.effort,
        eps_A_used=eps_A,
        alpha0_used=alpha0,
        cap_hit=cap_hit,
    )


def solve(
    oracle: NoisyOracle, region: BoxRegion, x0: Vector, cfg: SolverConfig
) -> List[IterationRecord]:
    """Run the configured solver from x0 and return its trace.

    Stops after ``max_iterations``, when the effort budget is spent, or when
    the stationarity measure stays below ``stationarity_tol`` for
    ``stationarity_patience`` consecutive iterations.
    """
    x = as_vector(x0, region.dimension, "x0")
    if not region.contains(x):
        raise InvalidInputError("The start point lies outside the feasible region.")
    if oracle.dimension != region.dimension:
        raise InvalidInputError(
            f"Oracle dimension {oracle.dimension} does not match region {region.dimension}."
        )
    if cfg.consistent and cfg.eps_A > 0:
        logger.debug("## Consistent sampling with eps_A > 0; eps_A = 0 is sufficient.")

    cal = CalibrationState.start(cfg) if cfg.mode == "gp-ls-cal" else None
    trace: List[IterationRecord] = []
    quiet = 0
    logger.info(f"Starting {cfg.mode} on {oracle.name} (N={oracle.batch_size}).")

    for k in range(cfg.max_iterations):
        if cfg.effort_budget is not None and oracle.effort >= cfg.effort_budget:
            logger.debug(f"## Effort budget {cfg.effort_budget} spent at iteration {k}.")
            break
        if cal is not None and k > 0 and k % cfg.T == 0:
            cal = calibration_update(cal)

        if cfg.consistent:
            oracle.pin_batch(cfg.seed, k)
        try:
            if cfg.mode == "gp-f":
                record = _gp_f_iterate(oracle, region, x, cfg, k)
            else:
                record = gp_ls_iterate(oracle, region, x, cfg, cal, k)
        except DivergedError as e:
            logger.error(f"{cfg.mode} diverged at iteration {k}: {e.message}")
            raise DivergedError(e.message, trace=trace)
        finally:
            if cfg.consistent:
                oracle.release_batch()

        if cal is not None:
            cal.record(record.backtracks)
        if cfg.reference_batch_size > 0:
            record.f_reference = oracle.reference_value(
                record.x, cfg.seed, k, cfg.reference_batch_size
            )
        trace.append(record)
        x = record.x_next

        quiet = quiet + 1 if record.stationarity <= cfg.stationarity_tol else 0
        if quiet >= cfg.stationarity_patience:
            logger.debug(f"## Stationarity tolerance held for {quiet} iterations.")
            break

    logger.info(f"Finished {cfg.mode} after {len(trace)} iterations, effort {oracle.effort}.")
    return trace
