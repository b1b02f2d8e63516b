# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""Noisy objective oracles built on sample averages.

An oracle evaluates ``mean + 3 * std`` (or the plain mean) of a per-sample
function over a batch of i.i.d. samples. Batches are identified by
``BatchHandle`` triples so that any batch can be re-materialized from its
seed, which gives sample consistency (pinning) without storing samples.
"""

import hashlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from constants import (
    FRESH_STREAM,
    HORN_COUPLING,
    HORN_CURVATURE,
    HORN_DIMENSION,
    HORN_FLOOR,
    HORN_IMPEDANCE_MEAN,
    HORN_IMPEDANCE_STD,
    HORN_LOWER,
    HORN_RIPPLE,
    HORN_SMOOTHING,
    HORN_SPREAD,
    HORN_TARGET,
    HORN_UPPER,
    HORN_WAVE_NUMBER,
    PINNED_STREAM,
    REFERENCE_STREAM,
)
from errors import InvalidConfigError, UnsupportedOperationError
from geometry import BoxRegion, Vector, as_vector
from scipy.stats import ortho_group

logger = logging.getLogger(__name__)

Samples = npt.NDArray[np.float64]
PerSampleFn = Callable[[Vector, Samples], npt.NDArray[np.float64]]
Sampler = Callable[[np.random.Generator, int], Samples]

STATISTICS = ("mean-plus-3std", "mean")
FAMILIES = ("horn-surrogate", "quadratic")
NOISE_DISTRIBUTIONS = ("none", "uniform", "normal")


@dataclass(frozen=True)
class BatchHandle:
    """Identifies one batch of samples by (stream, seed, counter)."""

    seed: int
    counter: int
    stream: int = FRESH_STREAM

    def generator(self) -> np.random.Generator:
        """Return the generator that materializes this batch."""
        return np.random.default_rng([self.stream, self.seed, self.counter])


@dataclass(eq=False)
class SampleStatistics:
    """Sample mean and Bessel-corrected variance, with optional gradients."""

    mean: float
    variance: float
    grad_mean: Optional[Vector] = None
    grad_std: Optional[Vector] = None

    @property
    def std(self) -> float:
        """Return the sample standard deviation."""
        return float(np.sqrt(self.variance))


def sample_statistics(
    values: npt.NDArray[np.float64], grads: Optional[npt.NDArray[np.float64]] = None
) -> SampleStatistics:
    """Return the statistics of per-sample values (and gradients if given).

    Deviations are taken from the first sample so that a batch of identical
    values has a mean equal to that value and a variance of exactly zero.
    """
    values = np.asarray(values, dtype=float)
    shift = values[0]
    deviations = values - shift
    mean = float(shift + deviations.mean())
    n = values.shape[0]
    variance = float(np.var(deviations, ddof=1)) if n > 1 else 0.0
    grad_mean = grad_std = None
    if grads is not None:
        grads = np.asarray(grads, dtype=float)
        grad_mean = grads[0] + (grads - grads[0]).mean(axis=0)
        grad_std = np.zeros_like(grad_mean)
        # The std term has subgradient 0 at zero variance.
        if n > 1 and variance > 0.0:
            centered = deviations - deviations.mean()
            grad_std = (centered @ (grads - grad_mean)) / ((n - 1) * np.sqrt(variance))
    return SampleStatistics(mean, variance, grad_mean, grad_std)


@dataclass(frozen=True)
class ComputationalNoise:
    """Deterministic perturbation in [-amplitude, amplitude] seeded by (seed, x)."""

    amplitude: float
    seed: int = 0

    def __call__(self, x: Vector) -> float:
        """Return the perturbation at x; identical inputs give identical outputs."""
        if self.amplitude == 0.0:
            return 0.0
        digest = hashlib.blake2b(
            np.ascontiguousarray(x, dtype=float).tobytes(), digest_size=8, key=b"noisegp"
        ).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
        return float(self.amplitude * rng.uniform(-1.0, 1.0))


class NoisyOracle:
    """Black-box noisy objective tied to sample batches.

    Every function evaluation counts ``batch_size`` towards ``effort``.
    Reference evaluations (reporting, large-batch estimates) do not count.
    """

    def __init__(
        self,
        per_sample_fn: PerSampleFn,
        sampler: Sampler,
        batch_size: int,
        dimension: int,
        seed: int = 0,
        per_sample_grad: Optional[PerSampleFn] = None,
        statistic: str = "mean-plus-3std",
        perturbation: Optional[ComputationalNoise] = None,
        concurrent_safe: bool = True,
        name: str = "custom",
    ):
        if statistic not in STATISTICS:
            raise InvalidConfigError(f"Unknown statistic '{statistic}'.")
        min_batch = 2 if statistic == "mean-plus-3std" else 1
        if int(batch_size) < min_batch:
            raise InvalidConfigError(
                f"Batch size {batch_size} is too small for statistic '{statistic}' "
                f"(need >= {min_batch})."
            )
        if seed < 0:
            raise InvalidConfigError(f"Oracle seed must be nonnegative, got {seed}.")
        self.per_sample_fn = per_sample_fn
        self.per_sample_grad = per_sample_grad
        self.sampler = sampler
        self.batch_size = int(batch_size)
        self.dimension = int(dimension)
        self.seed = int(seed)
        self.statistic = statistic
        self.perturbation = perturbation
        self.concurrent_safe = concurrent_safe
        self.name = name

        self._lock = threading.Lock()
        self._calls = 0
        self._next_counter = 0
        self._pinned: Optional[BatchHandle] = None
        self._last_batch: Optional[BatchHandle] = None

    @property
    def effort(self) -> int:
        """Return N times the number of function calls so far."""
        return self._calls * self.batch_size

    @property
    def calls(self) -> int:
        """Return the number of counted function calls."""
        return self._calls

    @property
    def pinned_batch(self) -> Optional[BatchHandle]:
        """Return the pinned batch, if any."""
        return self._pinned

    def pin_batch(self, seed: int, counter: int = 0) -> BatchHandle:
        """Reuse one batch for every evaluation until released."""
        self._pinned = BatchHandle(int(seed), int(counter), PINNED_STREAM)
        logger.debug(f"## Pinned batch {self._pinned} on {self.name}.")
        return self._pinned

    def release_batch(self) -> None:
        """Return to drawing a fresh batch per evaluation."""
        self._pinned = None

    def reserve_batches(self, count: int) -> List[BatchHandle]:
        """Return the handles the next ``count`` evaluations would use, in order."""
        if self._pinned is not None:
            return [self._pinned] * count
        with self._lock:
            first = self._next_counter
            self._next_counter += count
        return [BatchHandle(self.seed, first + i) for i in range(count)]

    def materialize(self, handle: BatchHandle, batch_size: Optional[int] = None) -> Samples:
        """Return the samples of a batch."""
        return self.sampler(handle.generator(), batch_size or self.batch_size)

    def statistics_on(
        self,
        x: Vector,
        handle: BatchHandle,
        with_gradient: bool = False,
        batch_size: Optional[int] = None,
    ) -> SampleStatistics:
        """Return sample statistics at x on a batch without counting effort."""
        x = as_vector(x, self.dimension)
        samples = self.materialize(handle, batch_size)
        values = self.per_sample_fn(x, samples)
        grads = None
        if with_gradient:
            if self.per_sample_grad is None:
                raise UnsupportedOperationError(
                    f"Oracle '{self.name}' has no per-sample gradient."
                )
            grads = self.per_sample_grad(x, samples)
        return sample_statistics(values, grads)

    def _objective(self, x: Vector, stats: SampleStatistics) -> float:
        value = stats.mean
        if self.statistic == "mean-plus-3std":
            value = stats.mean + 3.0 * stats.std
        if self.perturbation is not None:
            value += self.perturbation(x)
        return float(value)

    def _gradient(self, stats: SampleStatistics) -> Vector:
        assert stats.grad_mean is not None and stats.grad_std is not None
        if self.statistic == "mean-plus-3std":
            return stats.grad_mean + 3.0 * stats.grad_std
        return stats.grad_mean

    def _count(self) -> None:
        with self._lock:
            self._calls += 1

    def evaluate_on(self, x: Vector, handle: BatchHandle) -> float:
        """Evaluate f~ at x on the given batch, counting one call."""
        value = self._objective(x, self.statistics_on(x, handle))
        self._count()
        self._last_batch = handle
        return value

    def evaluate(self, x: Vector) -> float:
        """Evaluate f~ at x on the pinned batch or a fresh one."""
        return self.evaluate_on(x, self.reserve_batches(1)[0])

    def evaluate_many(self, x: Vector, m: int) -> List[float]:
        """Return m independent evaluations at x (m counted calls)."""
        return [self.evaluate(x) for _ in range(m)]

    def value_and_gradient(self, x: Vector) -> Tuple[float, Vector]:
        """Return f~ and its analytic gradient on one batch (one counted call)."""
        handle = self.reserve_batches(1)[0]
        stats = self.statistics_on(x, handle, with_gradient=True)
        self._count()
        self._last_batch = handle
        return self._objective(x, stats), self._gradient(stats)

    def gradient(self, x: Vector) -> Vector:
        """Return the analytic gradient on the batch of the paired evaluation.

        The pinned batch is used when one is pinned, otherwise the batch of the
        most recent evaluation. Without a prior evaluation a fresh batch is
        drawn and counted.
        """
        handle = self._pinned or self._last_batch
        if handle is None:
            return self.value_and_gradient(x)[1]
        return self._gradient(self.statistics_on(x, handle, with_gradient=True))

    def reference_value(self, x: Vector, seed: int, counter: int, batch_size: int) -> float:
        """Evaluate on an out-of-band batch; never counted, never pinned."""
        handle = BatchHandle(int(seed), int(counter), REFERENCE_STREAM)
        return self._objective(x, self.statistics_on(x, handle, batch_size=batch_size))


def evaluate(oracle: NoisyOracle, x: Vector) -> float:
    """Return mean + 3 std (or the mean) of the per-sample values at x."""
    return oracle.evaluate(x)


def analytic_gradient(oracle: NoisyOracle, x: Vector) -> Vector:
    """Return the analytic gradient of the sample objective at x."""
    return oracle.gradient(x)


def pin_batch(oracle: NoisyOracle, seed: int) -> BatchHandle:
    """Pin one batch on the oracle."""
    return oracle.pin_batch(seed)


def release_batch(oracle: NoisyOracle) -> None:
    """Release the pinned batch."""
    oracle.release_batch()


@dataclass(eq=False)
class QuadraticProblem:
    """Exact objective f(x) = 0.5 (x - center)^T H (x - center)."""

    hessian: npt.NDArray[np.float64]
    center: Vector

    @property
    def lipschitz(self) -> float:
        """Return the largest eigenvalue of H."""
        return float(np.linalg.eigvalsh(self.hessian)[-1])

    def f(self, x: Vector) -> float:
        """Return the true objective."""
        d = np.asarray(x, dtype=float) - self.center
        return float(0.5 * d @ (self.hessian @ d))

    def gradient(self, x: Vector) -> Vector:
        """Return the true gradient."""
        return self.hessian @ (np.asarray(x, dtype=float) - self.center)

    def minimizer(self, region: BoxRegion) -> Optional[Vector]:
        """Return the constrained minimizer when H is diagonal, else None."""
        if np.count_nonzero(self.hessian - np.diag(np.diag(self.hessian))):
            return None
        return region.project(self.center)


@dataclass
class SurrogateSpec:
    """Description of a built-in surrogate problem."""

    family: str = "horn-surrogate"
    batch_size: int = 100
    seed: int = 0
    dimension: int = HORN_DIMENSION
    lipschitz: float = 10.0
    strong_convexity: float = 1.0
    rotate: bool = False
    center: Optional[List[float]] = None
    start: Optional[List[float]] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    noise_distribution: str = "uniform"
    noise_amplitude: float = 0.0
    statistic: str = "mean-plus-3std"
    computational_noise: float = 0.0


@dataclass(eq=False)
class SurrogateProblem:
    """An oracle with its feasible box, start point and (if known) exact objective."""

    oracle: NoisyOracle
    region: BoxRegion
    x0: Vector
    exact: Optional[QuadraticProblem] = None
    spec: SurrogateSpec = field(default_factory=SurrogateSpec)


def _horn_sampler(rng: np.random.Generator, n: int) -> Samples:
    wave_number = rng.uniform(*HORN_WAVE_NUMBER, size=n)
    impedances = rng.normal(HORN_IMPEDANCE_MEAN, HORN_IMPEDANCE_STD, size=(n, 2))
    return np.column_stack([wave_number, impedances])


def _horn_terms(b: Vector, samples: Samples):
    """Return the pieces of q(b; xi) - 1 and of its gradient."""
    n = b.shape[0]
    target = np.asarray(HORN_TARGET[:n])
    d = b - target
    low, high = HORN_WAVE_NUMBER
    w = (samples[:, 0] - 0.5 * (low + high)) / (0.5 * (high - low))
    zl = (samples[:, 1] - HORN_IMPEDANCE_MEAN) / HORN_IMPEDANCE_STD
    zu = (samples[:, 2] - HORN_IMPEDANCE_MEAN) / HORN_IMPEDANCE_STD

    # Smooth nonconvex mean response: a bowl around the target shape with ripples.
    ripple = 4.0 * np.pi
    m = (
        HORN_FLOOR
        + 0.5 * HORN_CURVATURE * np.sum(d**2)
        + HORN_RIPPLE * np.sum(1.0 - np.cos(ripple * d))
    )
    grad_m = HORN_CURVATURE * d + HORN_RIPPLE * ripple * np.sin(ripple * d)

    # Spread of the response grows with the flare widths.
    base, slope = HORN_SPREAD
    kappa = base + slope * np.sum(b) / n
    grad_kappa = np.full(n, slope / n)

    u = 0.6 * w * (1.0 + 0.1 * zl) + 0.25 * zl + 0.25 * zu

    # Wave-number coupling on the (b3, b4) slice.
    phi = np.sin(2.0 * np.pi * b[2]) * np.cos(np.pi * b[3])
    grad_phi = np.zeros(n)
    grad_phi[2] = 2.0 * np.pi * np.cos(2.0 * np.pi * b[2]) * np.cos(np.pi * b[3])
    grad_phi[3] = -np.pi * np.sin(2.0 * np.pi * b[2]) * np.sin(np.pi * b[3])

    r = m + kappa * u + HORN_COUPLING * w * phi
    grad_r = (
        grad_m[None, :]
        + u[:, None] * grad_kappa[None, :]
        + HORN_COUPLING * w[:, None] * grad_phi
    )
    return r, grad_r


def _horn_values(b: Vector, samples: Samples) -> npt.NDArray[np.float64]:
    r, _ = _horn_terms(b, samples)
    return np.sqrt(r**2 + HORN_SMOOTHING**2)


def _horn_grads(b: Vector, samples: Samples) -> npt.NDArray[np.float64]:
    r, grad_r = _horn_terms(b, samples)
    s = np.sqrt(r**2 + HORN_SMOOTHING**2)
    return (r / s)[:, None] * grad_r


def _make_horn(spec: SurrogateSpec) -> SurrogateProblem:
    if spec.dimension != HORN_DIMENSION:
        raise InvalidConfigError(
            f"The horn surrogate has dimension {HORN_DIMENSION}, got {spec.dimension}."
        )
    lower = HORN_LOWER if spec.lower is None else spec.lower
    upper = HORN_UPPER if spec.upper is None else spec.upper
    region = BoxRegion.uniform(HORN_DIMENSION, lower, upper)
    oracle = NoisyOracle(
        _horn_values,
        _horn_sampler,
        batch_size=spec.batch_size,
        dimension=HORN_DIMENSION,
        seed=spec.seed,
        per_sample_grad=_horn_grads,
        statistic=spec.statistic,
        perturbation=_perturbation(spec),
        name="horn-surrogate",
    )
    x0 = _start(spec, region)
    return SurrogateProblem(oracle=oracle, region=region, x0=x0, spec=spec)


def _make_quadratic(spec: SurrogateSpec) -> SurrogateProblem:
    n = spec.dimension
    if n < 1:
        raise InvalidConfigError(f"Quadratic dimension must be >= 1, got {n}.")
    if not 0 < spec.strong_convexity <= spec.lipschitz:
        raise InvalidConfigError(
            "Quadratic needs 0 < strong-convexity <= lipschitz, got "
            f"{spec.strong_convexity} and {spec.lipschitz}."
        )
    if spec.noise_distribution not in NOISE_DISTRIBUTIONS:
        raise InvalidConfigError(f"Unknown noise distribution '{spec.noise_distribution}'.")
    if spec.noise_amplitude < 0:
        raise InvalidConfigError(f"Noise amplitude must be >= 0, got {spec.noise_amplitude}.")

    eigenvalues = np.geomspace(spec.strong_convexity, spec.lipschitz, n)
    hessian = np.diag(eigenvalues)
    if spec.rotate and n > 1:
        rotation = ortho_group.rvs(n, random_state=np.random.default_rng(spec.seed))
        hessian = rotation @ hessian @ rotation.T
        hessian = 0.5 * (hessian + hessian.T)
    center = np.linspace(-0.5, 1.5, n) if spec.center is None else np.asarray(spec.center)
    exact = QuadraticProblem(hessian=hessian, center=as_vector(center, n, "center"))

    lower = 0.0 if spec.lower is None else spec.lower
    upper = 1.0 if spec.upper is None else spec.upper
    region = BoxRegion.uniform(n, lower, upper)

    amplitude = float(spec.noise_amplitude)
    distribution = spec.noise_distribution if amplitude > 0 else "none"

    def sampler(rng: np.random.Generator, size: int) -> Samples:
        if distribution == "uniform":
            return rng.uniform(-amplitude, amplitude, size=(size, 1))
        if distribution == "normal":
            return rng.normal(0.0, amplitude, size=(size, 1))
        return np.zeros((size, 1))

    def values(x: Vector, samples: Samples) -> npt.NDArray[np.float64]:
        return exact.f(x) + samples[:, 0]

    def grads(x: Vector, samples: Samples) -> npt.NDArray[np.float64]:
        return np.tile(exact.gradient(x), (samples.shape[0], 1))

    oracle = NoisyOracle(
        values,
        sampler,
        batch_size=spec.batch_size,
        dimension=n,
        seed=spec.seed,
        per_sample_grad=grads,
        statistic=spec.statistic,
        perturbation=_perturbation(spec),
        name="quadratic",
    )
    return SurrogateProblem(
        oracle=oracle, region=region, x0=_start(spec, region), exact=exact, spec=spec
    )


def _perturbation(spec: SurrogateSpec) -> Optional[ComputationalNoise]:
    if spec.computational_noise < 0:
        raise InvalidConfigError(
            f"Computational noise must be >= 0, got {spec.computational_noise}."
        )
    if spec.computational_noise == 0:
        return None
    return ComputationalNoise(spec.computational_noise, spec.seed)


def _start(spec: SurrogateSpec, region: BoxRegion) -> Vector:
    if spec.start is None:
        return 0.5 * (region.lower + region.upper)
    x0 = as_vector(spec.start, region.dimension, "start")
    if not region.contains(x0):
        raise InvalidConfigError("The start point lies outside the bounds.")
    return x0


def make_surrogate_problem(spec: SurrogateSpec) -> SurrogateProblem:
    """Build the oracle and box for a built-in surrogate family."""
    builders = {
        "horn-surrogate": _make_horn,
        "quadratic": _make_quadratic,
    }
    if spec.family not in builders:
        raise InvalidConfigError(
            f"Unknown surrogate family '{spec.family}', expected one of {FAMILIES}."
        )
    logger.debug(f"## Building {spec.family} problem with N={spec.batch_size}.")
    return builders[spec.family](spec)
