# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Noise-aware finite-difference gradients."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from constants import FD_INTERVAL_CONSTANT, H_MIN, H_NOISE_FREE, PROJECTION_TOL
from errors import InvalidConfigError, UnsupportedOperationError
from geometry import BoxRegion, Vector, as_vector
from stochastic import NoisyOracle

logger = logging.getLogger(__name__)

SAMPLE_MODES = ("consistent", "inconsistent")
SCHEMES = ("forward", "central")


@dataclass(frozen=True)
class FDConfig:
    """Finite-difference interval, sampling mode and scheme."""

    interval: float
    sample_mode: str = "inconsistent"
    scheme: str = "forward"
    workers: int = 1

    def __post_init__(self):
        if not self.interval > 0:
            raise InvalidConfigError(f"FD interval must be positive, got {self.interval}.")
        if self.interval < H_MIN:
            raise InvalidConfigError(
                f"FD interval {self.interval} is below machine epsilon {H_MIN}."
            )
        if self.sample_mode not in SAMPLE_MODES:
            raise InvalidConfigError(
                f"Unknown sample mode '{self.sample_mode}', expected one of {SAMPLE_MODES}."
            )
        if self.scheme not in SCHEMES:
            raise InvalidConfigError(
                f"Unknown FD scheme '{self.scheme}', expected one of {SCHEMES}."
            )
        if self.workers < 1:
            raise InvalidConfigError(f"FD workers must be >= 1, got {self.workers}.")


def optimal_interval(eps_f: float, L: float) -> float:
    """Return h = 8^(1/4) sqrt(eps_f / L), or the noise-free interval when eps_f = 0."""
    if not L > 0:
        raise InvalidConfigError(f"Lipschitz constant must be positive, got {L}.")
    if eps_f < 0:
        raise InvalidConfigError(f"Noise level must be >= 0, got {eps_f}.")
    if eps_f == 0:
        return H_NOISE_FREE
    return float(FD_INTERVAL_CONSTANT * np.sqrt(eps_f / L))


def fd_gradient_error_bound(eps_b: float, h: float, L: float, n: int) -> float:
    """Return sqrt(n) (2 eps_b / h + L h / 2), a bound on the forward-difference error norm."""
    if not h > 0:
        raise InvalidConfigError(f"FD interval must be positive, got {h}.")
    return float(np.sqrt(n) * (2.0 * eps_b / h + 0.5 * L * h))


def _offsets(x: Vector, h: float, region: Optional[BoxRegion], scheme: str) -> List[Tuple]:
    """Return per coordinate the pair of signed offsets to difference, 0 meaning x itself."""
    offsets = []
    for i in range(x.shape[0]):
        if region is None:
            offsets.append((1.0, -1.0) if scheme == "central" else (1.0, 0.0))
            continue
        lower, upper = region.lower[i], region.upper[i]
        if lower == upper:
            offsets.append(None)
            continue
        fits_up = x[i] + h <= upper + PROJECTION_TOL
        fits_down = x[i] - h >= lower - PROJECTION_TOL
        if not (fits_up or fits_down):
            raise InvalidConfigError(
                f"FD interval {h} exceeds the width of the box at coordinate {i}."
            )
        if scheme == "central" and fits_up and fits_down:
            offsets.append((1.0, -1.0))
        elif fits_up:
            offsets.append((1.0, 0.0))
        else:
            # Backward difference at the upper bound.
            offsets.append((0.0, -1.0))
    return offsets


def fd_gradient(
    oracle: NoisyOracle,
    x: Vector,
    cfg: FDConfig,
    region: Optional[BoxRegion] = None,
    f_base: Optional[float] = None,
) -> Vector:
    """Return the finite-difference gradient of the oracle at x.

    In consistent mode all evaluations share one batch: the batch already
    pinned on the oracle, or a batch pinned for this call and released after.
    ``f_base`` reuses an evaluation of f~(x) on the same batch.
    """
    x = as_vector(x, oracle.dimension)
    h = cfg.interval
    offsets = _offsets(x, h, region, cfg.scheme)

    pinned_here = False
    if cfg.sample_mode == "consistent" and oracle.pinned_batch is None:
        if not hasattr(oracle, "pin_batch"):
            raise UnsupportedOperationError("Consistent FD requires an oracle with batch pinning.")
        handle = oracle.reserve_batches(1)[0]
        oracle.pin_batch(handle.seed, handle.counter)
        pinned_here = True

    try:
        points = {}
        for i, pair in enumerate(offsets):
            if pair is None:
                continue
            for sign in pair:
                if sign != 0.0:
                    step = np.zeros_like(x)
                    step[i] = sign * h
                    points[(i, sign)] = x + step
        needs_base = f_base is None and any(
            pair is not None and 0.0 in pair for pair in offsets
        )
        keys = list(points)
        if needs_base:
            keys.insert(0, "base")
            points["base"] = x
        values = dict(zip(keys, _evaluate_points(oracle, [points[k] for k in keys], cfg)))
        base = values["base"] if needs_base else f_base
    finally:
        if pinned_here:
            oracle.release_batch()

    grad = np.zeros_like(x)
    for i, pair in enumerate(offsets):
        if pair is None:
            continue
        high, low = pair
        f_high = base if high == 0.0 else values[(i, high)]
        f_low = base if low == 0.0 else values[(i, low)]
        grad[i] = (f_high - f_low) / ((high - low) * h)
    logger.debug(f"## FD gradient with h={h} ({cfg.scheme}, {cfg.sample_mode}): {grad}")
    return grad


def _evaluate_points(oracle: NoisyOracle, points: List[Vector], cfg: FDConfig) -> List[float]:
    """Evaluate in order; concurrently when allowed, assembled by index."""
    if cfg.workers == 1 or not oracle.concurrent_safe or len(points) < 2:
        return [oracle.evaluate(point) for point in points]
    handles = oracle.reserve_batches(len(points))
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(oracle.evaluate_on, points, handles))
