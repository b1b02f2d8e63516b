# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Feasible-region projection, search directions and the stationarity measure."""

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import numpy.typing as npt
from constants import PROJECTION_TOL
from errors import InvalidConfigError, InvalidInputError

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]


def as_vector(x, n: int, name: str = "x") -> Vector:
    """Return x as a float vector of dimension n, or raise InvalidInputError."""
    vec = np.asarray(x, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != n:
        raise InvalidInputError(f"{name} has shape {vec.shape}, expected ({n},).")
    return vec


class ConvexRegion(Protocol):
    """A closed convex feasible set."""

    @property
    def dimension(self) -> int:
        """Return the ambient dimension."""
        ...

    def project(self, x: Vector) -> Vector:
        """Return the Euclidean projection of x."""
        ...

    def contains(self, x: Vector, tol: float = PROJECTION_TOL) -> bool:
        """Return True if x is feasible within tol."""
        ...


@dataclass(frozen=True, eq=False)
class BoxRegion:
    """Box bounds lower <= x <= upper.

    Equal bounds are allowed and fix the coordinate.
    """

    lower: Vector
    upper: Vector

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.shape[0] < 1:
            raise InvalidInputError(
                f"Bounds must be vectors of equal dimension >= 1, got {lower.shape} "
                f"and {upper.shape}."
            )
        if np.any(lower > upper):
            bad = np.flatnonzero(lower > upper).tolist()
            raise InvalidInputError(f"lower > upper at coordinates {bad}.")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def uniform(cls, n: int, lower: float, upper: float) -> "BoxRegion":
        """Return the box [lower, upper]^n."""
        return cls(np.full(n, lower), np.full(n, upper))

    @property
    def dimension(self) -> int:
        """Return n."""
        return int(self.lower.shape[0])

    def project(self, x: Vector) -> Vector:
        """Clamp x coordinatewise."""
        return np.minimum(np.maximum(as_vector(x, self.dimension), self.lower), self.upper)

    def contains(self, x: Vector, tol: float = PROJECTION_TOL) -> bool:
        """Return True if x lies in the box up to tol."""
        vec = as_vector(x, self.dimension)
        return bool(np.all(vec >= self.lower - tol) and np.all(vec <= self.upper + tol))

    def sample(self, rng: np.random.Generator) -> Vector:
        """Draw a uniformly distributed feasible point."""
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class SearchDirection:
    """Projected gradient direction p = P[x - alpha0 g] - x at base_point."""

    direction: Vector
    base_point: Vector
    trial_scale: float


def project(region: ConvexRegion, x: Vector) -> Vector:
    """Return the projection of x onto region."""
    return region.project(x)


def search_direction(
    region: ConvexRegion, x: Vector, g: Vector, alpha0: float
) -> SearchDirection:
    """Return the projected gradient direction at x."""
    if not alpha0 > 0:
        raise InvalidConfigError(f"alpha0 must be positive, got {alpha0}.")
    n = region.dimension
    x = as_vector(x, n)
    g = as_vector(g, n, "g")
    if not region.contains(x):
        raise InvalidInputError("Search direction requested at an infeasible point.")
    direction = region.project(x - alpha0 * g) - x
    return SearchDirection(direction=direction, base_point=x, trial_scale=float(alpha0))


def stationarity_measure(d: SearchDirection, g: Vector) -> float:
    """Return -p^T g, which vanishes exactly at first-order stationary points."""
    g = as_vector(g, d.direction.shape[0], "g")
    return float(-(d.direction @ g))
