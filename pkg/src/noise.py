# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Noise level and noise bound estimators."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence

import numpy as np
from constants import (
    CHEBYSHEV_LAMBDA,
    DIFFERENCE_TABLE_AGREEMENT,
    DIFFERENCE_TABLE_POINTS,
    MACHINE_EPS,
    PROJECTION_TOL,
)
from errors import (
    EstimationFailedError,
    InsufficientSamplesError,
    InvalidConfigError,
    InvalidInputError,
)
from geometry import BoxRegion, Vector, as_vector
from scipy.special import comb

logger = logging.getLogger(__name__)

NOISE_METHODS = (
    "pointwise-std",
    "global-average",
    "global-min",
    "chebyshev",
    "max-abs",
    "range",
    "difference-table",
)
_TWO_SAMPLE_METHODS = ("pointwise-std", "range", "chebyshev")


class Evaluator(Protocol):
    """Anything that returns a noisy objective value at x."""

    def evaluate(self, x: Vector) -> float:
        """Return f~(x)."""
        ...


@dataclass(frozen=True, eq=False)
class NoiseEstimate:
    """An estimated noise level or noise bound."""

    value: float
    method: str
    sample_count: int
    location: Optional[Vector] = None

    def __post_init__(self):
        if self.method not in NOISE_METHODS:
            raise InvalidInputError(f"Unknown noise estimation method '{self.method}'.")
        if not self.value >= 0:
            raise InvalidInputError(f"Noise estimate must be >= 0, got {self.value}.")
        minimum = 2 if self.method in _TWO_SAMPLE_METHODS else 1
        if self.sample_count < minimum:
            raise InsufficientSamplesError(
                f"Method '{self.method}' needs at least {minimum} samples, "
                f"got {self.sample_count}."
            )


def _samples(values: Sequence[float], minimum: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.shape[0] < minimum:
        raise InsufficientSamplesError(
            f"{what} needs at least {minimum} samples, got {arr.shape[0]}."
        )
    return arr


def _std(arr: np.ndarray) -> float:
    # Shifted by the first sample so identical samples give exactly 0.
    return float(np.std(arr - arr[0], ddof=1))


def pointwise_noise_level(
    samples: Sequence[float], location: Optional[Vector] = None
) -> NoiseEstimate:
    """Return the Bessel-corrected standard deviation of repeated evaluations at one x."""
    arr = _samples(samples, 2, "Pointwise noise level")
    return NoiseEstimate(_std(arr), "pointwise-std", arr.shape[0], location)


def global_noise_level(
    per_point: Sequence[NoiseEstimate], aggregate: str = "mean"
) -> NoiseEstimate:
    """Combine pointwise estimates from M points into one noise level.

    ``aggregate="mean"`` averages them; ``aggregate="min"`` keeps the smallest,
    a lower estimate suited to choosing a relaxation.
    """
    if len(per_point) < 1:
        raise InsufficientSamplesError("Global noise level needs at least one point.")
    values = np.array([estimate.value for estimate in per_point])
    if aggregate == "mean":
        return NoiseEstimate(float(values.mean()), "global-average", len(per_point))
    if aggregate == "min":
        return NoiseEstimate(float(values.min()), "global-min", len(per_point))
    raise InvalidConfigError(f"Unknown aggregate '{aggregate}', expected 'mean' or 'min'.")


def noise_deltas(values: Sequence[float], f_hat: float) -> np.ndarray:
    """Return the noise samples f~_j(x) - f^(x) against a large-batch estimate f^."""
    return np.asarray(values, dtype=float) - float(f_hat)


def chebyshev_bound(
    deltas: Sequence[float], lam: int = CHEBYSHEV_LAMBDA, location: Optional[Vector] = None
) -> NoiseEstimate:
    """Return the empirical Chebyshev bound mean(deltas) + lam * std(deltas).

    A negative bound (strongly negative-mean noise) is reported as 0.
    """
    if int(lam) != lam or lam < 1:
        raise InvalidConfigError(f"lambda must be an integer >= 1, got {lam}.")
    arr = _samples(deltas, 2, "Chebyshev bound")
    value = float(arr.mean() + lam * _std(arr))
    return NoiseEstimate(max(value, 0.0), "chebyshev", arr.shape[0], location)


def max_abs_bound(deltas: Sequence[float], location: Optional[Vector] = None) -> NoiseEstimate:
    """Return max_j |delta_j|."""
    arr = _samples(deltas, 1, "Max-abs bound")
    return NoiseEstimate(float(np.max(np.abs(arr))), "max-abs", arr.shape[0], location)


def range_bound(values: Sequence[float], location: Optional[Vector] = None) -> NoiseEstimate:
    """Return max - min of raw noisy objectives at one x.

    For noise with a nonzero or asymmetric distribution this estimates the
    width of the noise support, not the bound itself.
    """
    arr = _samples(values, 2, "Range bound")
    return NoiseEstimate(float(arr.max() - arr.min()), "range", arr.shape[0], location)


def random_direction(rng: np.random.Generator, n: int) -> Vector:
    """Return a uniformly distributed unit vector in R^n."""
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def difference_table(values: Sequence[float]) -> List[np.ndarray]:
    """Return the forward-difference table; entry k holds the k-th differences."""
    table = [np.asarray(values, dtype=float)]
    for _ in range(1, len(table[0])):
        table.append(np.diff(table[-1]))
    return table


def difference_table_noise(
    oracle: Evaluator,
    x: Vector,
    direction: Vector,
    spacing: float,
    points: int = DIFFERENCE_TABLE_POINTS,
    region: Optional[BoxRegion] = None,
) -> NoiseEstimate:
    """Estimate the noise level from equally spaced evaluations along a line.

    Column k of the difference table is scaled by (k!)^2 / (2k)!, so that for
    pure noise its mean square estimates the noise variance. The first column
    k whose differences change sign and whose scaled levels agree with columns
    k+1 and k+2 within a factor 4 is accepted.
    """
    if points < 6:
        raise InvalidConfigError(f"Difference table needs >= 6 points, got {points}.")
    if not spacing > 0:
        raise InvalidConfigError(f"Spacing must be positive, got {spacing}.")
    x = np.asarray(x, dtype=float)
    direction = as_vector(direction, x.shape[0], "direction")
    if abs(np.linalg.norm(direction) - 1.0) > 1e-8:
        raise InvalidInputError("The difference-table direction must be a unit vector.")
    line = [x + i * spacing * direction for i in range(points)]
    if region is not None and not (
        region.contains(line[0], PROJECTION_TOL) and region.contains(line[-1], PROJECTION_TOL)
    ):
        raise InvalidInputError("The difference-table line leaves the feasible region.")

    table = difference_table([oracle.evaluate(point) for point in line])
    orders = range(1, points - 1)
    mean_squares = {
        k: float(np.mean(table[k] ** 2) / comb(2 * k, k, exact=True)) for k in orders
    }
    logger.debug(f"## Difference-table mean squares: {mean_squares}")

    scale = float(np.max(np.abs(table[0])))
    for k in orders:
        # A column at rounding level means a polynomial trend and no noise.
        if k >= 2 and np.max(np.abs(table[k])) <= 2.0**k * 4.0 * MACHINE_EPS * scale:
            return NoiseEstimate(0.0, "difference-table", points, x)

    for k in range(1, points - 3):
        window = [mean_squares[k], mean_squares[k + 1], mean_squares[k + 2]]
        changes_sign = np.any(table[k] > 0) and np.any(table[k] < 0)
        levels = np.sqrt(window)
        if changes_sign and levels.min() > 0:
            if levels.max() <= DIFFERENCE_TABLE_AGREEMENT * levels.min():
                return NoiseEstimate(
                    float(np.sqrt(np.median(window))), "difference-table", points, x
                )

    raise EstimationFailedError(
        "No stable column in the difference table; try another spacing.",
        table=[column.tolist() for column in table],
    )
