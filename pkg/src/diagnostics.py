# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Convergence-theory constants and empirical checks of solver traces.

All checks need the exact objective, so they apply to synthetic problems
(e.g. the quadratic family) only.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from errors import InvalidConfigError, InvalidInputError, StationaryPointError
from finite_difference import fd_gradient_error_bound
from geometry import BoxRegion, search_direction, stationarity_measure
from solvers import IterationRecord
from stochastic import QuadraticProblem

logger = logging.getLogger(__name__)

STEP_TOL = 1e-12
LOWER_BOUND_TOL = 1e-10
DESCENT_TOL = 1e-10


def _check_hypothesis(alpha0: float, c: float) -> None:
    if alpha0 < 0 or c < 0:
        raise InvalidConfigError(f"alpha0 and c must be >= 0, got {alpha0} and {c}.")
    if alpha0 + 2 * c >= 1:
        raise InvalidConfigError(
            f"The neighborhood bound needs alpha0 + 2c < 1, got {alpha0 + 2 * c}."
        )


def gamma_squared(alpha0: float, c: float) -> float:
    """Return (1 - 2c - alpha0)(1 - alpha0) / ((1 - 2c - alpha0)(3 alpha0 + 1) + 2)."""
    _check_hypothesis(alpha0, c)
    slack = 1.0 - 2.0 * c - alpha0
    return float(slack * (1.0 - alpha0) / (slack * (3.0 * alpha0 + 1.0) + 2.0))


def lower_bound_coefficient(alpha0: float, gamma_sq: float) -> float:
    """Return 1/2 - alpha0/2 - (3 alpha0/2 + 1/2) gamma^2."""
    return float(0.5 - 0.5 * alpha0 - (1.5 * alpha0 + 0.5) * gamma_sq)


def epsilon_bar(
    alpha0: float, c: float, rho: float, L: float, eps_g: float, eps_A: float, eps_b: float
) -> float:
    """Return the radius of the neighborhood the stationarity measure reaches."""
    gamma_sq = gamma_squared(alpha0, c)
    if not L > 0:
        raise InvalidConfigError(f"L must be positive, got {L}.")
    if not 0 < rho < 1:
        raise InvalidConfigError(f"rho must lie in (0, 1), got {rho}.")
    if not 0 < c < 1:
        raise InvalidConfigError(f"c must lie in (0, 1), got {c}.")
    if min(eps_g, eps_A, eps_b) < 0:
        raise InvalidConfigError("Noise bounds must be >= 0.")
    coefficient = lower_bound_coefficient(alpha0, gamma_sq)
    assert coefficient > 0
    return float(
        eps_g**2 / gamma_sq + 2.0 * alpha0 * L / (c * rho * coefficient) * (eps_A + eps_b)
    )


def noise_free_step_bound(rho: float, c: float, alpha0: float, L: float) -> float:
    """Return 2 rho (1 - c) / (alpha0 L), the smallest step accepted without noise."""
    if not (alpha0 > 0 and L > 0):
        raise InvalidConfigError("alpha0 and L must be positive.")
    return float(2.0 * rho * (1.0 - c) / (alpha0 * L))


def gamma_k(delta_g_norm: float, stationarity: float) -> float:
    """Return ||delta_g|| / sqrt(-p^T g)."""
    if not stationarity > 0:
        raise StationaryPointError(f"gamma_k is undefined at stationarity {stationarity}.")
    return float(delta_g_norm / np.sqrt(stationarity))


@dataclass(frozen=True)
class TheoryConstants:
    """gamma^2 and eps_bar together with their inputs."""

    alpha0: float
    c: float
    rho: float
    L: float
    eps_g: float
    eps_A: float
    eps_b: float
    gamma_sq: float = field(init=False)
    eps_bar: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma_sq", gamma_squared(self.alpha0, self.c))
        object.__setattr__(
            self,
            "eps_bar",
            epsilon_bar(
                self.alpha0, self.c, self.rho, self.L, self.eps_g, self.eps_A, self.eps_b
            ),
        )

    @classmethod
    def for_fd_run(
        cls,
        alpha0: float,
        c: float,
        rho: float,
        L: float,
        eps_A: float,
        eps_b: float,
        h: float,
        n: int,
    ) -> "TheoryConstants":
        """Return the constants of a forward-difference run, eps_g from the FD error split."""
        eps_g = fd_gradient_error_bound(eps_b, h, L, n)
        return cls(alpha0, c, rho, L, eps_g, eps_A, eps_b)


@dataclass
class NeighborhoodReport:
    """Minimum exact stationarity over a trace compared with eps_bar."""

    min_stationarity: float
    argmin: int
    eps_bar: float
    holds: bool
    case_1: int
    case_2: int

    def as_dict(self) -> dict:
        """Return the report as plain data."""
        return {
            "min_stationarity": self.min_stationarity,
            "argmin": self.argmin,
            "eps_bar": self.eps_bar,
            "holds": self.holds,
            "case_1": self.case_1,
            "case_2": self.case_2,
        }


def _classify(delta_g_norm: float, stationarity: float, gamma_sq: float) -> str:
    if delta_g_norm**2 <= gamma_sq * max(stationarity, 0.0):
        return "case-1"
    # At an exact stationary point only zero gradient error counts as small.
    return "case-1" if stationarity <= 0 and delta_g_norm == 0 else "case-2"


def verify_neighborhood(
    trace: Sequence[IterationRecord],
    exact: QuadraticProblem,
    region: BoxRegion,
    constants: TheoryConstants,
) -> NeighborhoodReport:
    """Check that the smallest exact stationarity measure on the trace is at most eps_bar."""
    if not trace:
        raise InvalidInputError("Cannot verify an empty trace.")
    measures = []
    counts = {"case-1": 0, "case-2": 0}
    for record in trace:
        g = exact.gradient(record.x)
        measure = stationarity_measure(search_direction(region, record.x, g, constants.alpha0), g)
        measures.append(measure)
        delta = float(np.linalg.norm(record.gradient - g))
        counts[_classify(delta, measure, constants.gamma_sq)] += 1
    argmin = int(np.argmin(measures))
    report = NeighborhoodReport(
        min_stationarity=float(measures[argmin]),
        argmin=int(trace[argmin].k),
        eps_bar=constants.eps_bar,
        holds=bool(measures[argmin] <= constants.eps_bar),
        case_1=counts["case-1"],
        case_2=counts["case-2"],
    )
    logger.debug(f"## Neighborhood report: {report.as_dict()}")
    return report


@dataclass
class InequalityCheck:
    """The inequalities replayed at one iterate."""

    k: int
    case: str
    projection_noise: bool
    noisy_descent: bool
    lower_bound: bool
    step_descent: Optional[bool]

    @property
    def holds(self) -> bool:
        """Return True if every applicable inequality holds."""
        return (
            self.projection_noise
            and self.noisy_descent
            and self.lower_bound
            and self.step_descent is not False
        )


@dataclass
class ReplayReport:
    """Per-iteration inequality checks of one trace."""

    checks: List[InequalityCheck]

    @property
    def all_hold(self) -> bool:
        """Return True if every iterate passes."""
        return all(check.holds for check in self.checks)

    @property
    def failures(self) -> List[int]:
        """Return the iterations where some inequality fails."""
        return [check.k for check in self.checks if not check.holds]


def replay_inequalities(
    trace: Sequence[IterationRecord],
    exact: QuadraticProblem,
    region: BoxRegion,
    constants: TheoryConstants,
) -> ReplayReport:
    """Replay the noise-propagation, descent and stationarity bounds at each iterate.

    The per-step descent bound needs ``constants.eps_b`` to bound the noise of
    every evaluation; it is skipped (``None``) on steps taken at the backtrack cap.
    """
    checks = []
    for record in trace:
        alpha0 = record.alpha0_used
        g = exact.gradient(record.x)
        g_noisy = record.gradient
        p = search_direction(region, record.x, g, alpha0).direction
        p_noisy = search_direction(region, record.x, g_noisy, alpha0).direction
        delta_g = float(np.linalg.norm(g_noisy - g))
        measure = float(-(p @ g))
        measure_noisy = float(-(p_noisy @ g_noisy))

        projection_noise = float(np.linalg.norm(p - p_noisy)) <= alpha0 * delta_g + STEP_TOL
        noisy_descent = float(p_noisy @ p_noisy) <= alpha0 * measure_noisy + STEP_TOL
        if measure > 0:
            coefficient = lower_bound_coefficient(alpha0, gamma_k(delta_g, measure) ** 2)
            lower_bound = measure_noisy >= coefficient * measure - LOWER_BOUND_TOL
        else:
            lower_bound = measure_noisy >= -LOWER_BOUND_TOL
        step_descent = None
        if not record.cap_hit:
            step_descent = exact.f(record.x_next) <= (
                exact.f(record.x) + 2.0 * record.eps_A_used + 2.0 * constants.eps_b + DESCENT_TOL
            )
        checks.append(
            InequalityCheck(
                k=record.k,
                case=_classify(delta_g, measure, constants.gamma_sq),
                projection_noise=bool(projection_noise),
                noisy_descent=bool(noisy_descent),
                lower_bound=bool(lower_bound),
                step_descent=None if step_descent is None else bool(step_descent),
            )
        )
    report = ReplayReport(checks)
    if not report.all_hold:
        logger.warning(f"Inequality replay failed at iterations {report.failures[:10]}.")
    return report
