#!/usr/bin/env python3
# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.

"""Test finite-difference gradients and interval selection."""

import unittest

import numpy as np
from constants import H_NOISE_FREE
from errors import InvalidConfigError
from finite_difference import FDConfig, fd_gradient, fd_gradient_error_bound, optimal_interval
from geometry import BoxRegion
from stochastic import NoisyOracle, SurrogateSpec, make_surrogate_problem


def linear_oracle(slope=3.0, n=1) -> NoisyOracle:
    """Return a noise-free oracle of slope * sum(x)."""
    return NoisyOracle(
        lambda x, s: slope * np.sum(x) + s[:, 0],
        lambda rng, size: np.zeros((size, 1)),
        batch_size=1,
        dimension=n,
        statistic="mean",
    )


def square_problem(**overrides):
    """Return f(x) = sum(x^2) on [-2, 2]^n without noise."""
    params = dict(
        family="quadratic",
        dimension=1,
        lipschitz=2.0,
        strong_convexity=2.0,
        center=[0.0],
        lower=-2.0,
        upper=2.0,
        batch_size=3,
        statistic="mean",
    )
    params.update(overrides)
    return make_surrogate_problem(SurrogateSpec(**params))


class TestInterval(unittest.TestCase):
    def test_optimal_interval(self) -> None:
        """Test h = 8^(1/4) sqrt(eps_f / L)."""
        self.assertAlmostEqual(optimal_interval(1e-4, 1.0), 1.6817928e-2, places=8)
        self.assertAlmostEqual(optimal_interval(1e-2, 4.0), 8.0**0.25 * 0.05)

    def test_noise_free_interval(self) -> None:
        """Test that eps_f = 0 falls back to eps^(1/3)."""
        self.assertEqual(optimal_interval(0.0, 1.0), H_NOISE_FREE)
        self.assertAlmostEqual(H_NOISE_FREE, 6.055e-6, places=8)

    def test_interval_validation(self) -> None:
        """Test rejection of L <= 0 and eps_f < 0."""
        with self.assertRaises(InvalidConfigError):
            optimal_interval(1e-3, 0.0)
        with self.assertRaises(InvalidConfigError):
            optimal_interval(-1e-3, 1.0)

    def test_error_bound(self) -> None:
        """Test sqrt(n) (2 eps_b / h + L h / 2)."""
        self.assertAlmostEqual(fd_gradient_error_bound(1e-3, 0.1, 2.0, 4), 2.0 * (0.02 + 0.1))
        with self.assertRaises(InvalidConfigError):
            fd_gradient_error_bound(1e-3, 0.0, 1.0, 1)

    def test_config_validation(self) -> None:
        """Test FDConfig validation."""
        with self.assertRaises(InvalidConfigError):
            FDConfig(0.0)
        with self.assertRaises(InvalidConfigError):
            FDConfig(1e-17)
        with self.assertRaises(InvalidConfigError):
            FDConfig(1e-3, sample_mode="sometimes")
        with self.assertRaises(InvalidConfigError):
            FDConfig(1e-3, scheme="backward")
        with self.assertRaises(InvalidConfigError):
            FDConfig(1e-3, workers=0)


class TestFDGradient(unittest.TestCase):
    def test_forward_difference_of_square(self) -> None:
        """Test (f(1 + h) - f(1)) / h = 2 + h for f = x^2."""
        problem = square_problem()
        g = fd_gradient(problem.oracle, np.array([1.0]), FDConfig(1e-4))
        self.assertAlmostEqual(g[0], 2.0001, places=7)

    def test_linear_function_is_exact(self) -> None:
        """Test that a linear function is differenced exactly."""
        g = fd_gradient(linear_oracle(), np.array([1.0]), FDConfig(0.25))
        self.assertEqual(g[0], 3.0)

    def test_backward_difference_at_upper_bound(self) -> None:
        """Test the switch to a backward difference at the upper bound."""
        problem = square_problem(lower=0.0, upper=1.0)
        g = fd_gradient(problem.oracle, np.array([1.0]), FDConfig(1e-4), region=problem.region)
        self.assertAlmostEqual(g[0], 2.0 - 1e-4, places=7)

    def test_central_falls_back_near_bound(self) -> None:
        """Test that central differences become one-sided at a bound."""
        problem = square_problem(lower=0.0, upper=1.0)
        cfg = FDConfig(1e-4, scheme="central")
        interior = fd_gradient(problem.oracle, np.array([0.5]), cfg, region=problem.region)
        self.assertAlmostEqual(interior[0], 1.0, places=7)
        at_lower = fd_gradient(problem.oracle, np.array([0.0]), cfg, region=problem.region)
        self.assertAlmostEqual(at_lower[0], 1e-4, places=7)

    def test_fixed_coordinate(self) -> None:
        """Test that a coordinate with equal bounds has zero FD gradient."""
        oracle = linear_oracle(n=2)
        region = BoxRegion(np.array([0.0, 0.5]), np.array([1.0, 0.5]))
        g = fd_gradient(oracle, np.array([0.5, 0.5]), FDConfig(0.25), region=region)
        np.testing.assert_array_equal(g, [3.0, 0.0])
        self.assertEqual(oracle.calls, 2)

    def test_interval_wider_than_box(self) -> None:
        """Test that an interval exceeding the box width is an error."""
        problem = square_problem(lower=0.0, upper=0.1)
        with self.assertRaises(InvalidConfigError):
            fd_gradient(problem.oracle, np.array([0.05]), FDConfig(0.5), region=problem.region)

    def test_call_counts(self) -> None:
        """Test n + 1 calls forward, n with f_base, 2n central."""
        n = 3
        x = np.full(n, 0.5)
        oracle = linear_oracle(n=n)
        fd_gradient(oracle, x, FDConfig(1e-3))
        self.assertEqual(oracle.calls, n + 1)
        oracle = linear_oracle(n=n)
        fd_gradient(oracle, x, FDConfig(1e-3), f_base=oracle.evaluate(x))
        self.assertEqual(oracle.calls, n + 1)
        oracle = linear_oracle(n=n)
        fd_gradient(oracle, x, FDConfig(1e-3, scheme="central"))
        self.assertEqual(oracle.calls, 2 * n)

    def test_consistent_mode_uses_pinned_batch(self) -> None:
        """Test that consistent FD is deterministic on a pinned batch."""
        problem = make_surrogate_problem(SurrogateSpec(batch_size=10, seed=1))
        oracle, x = problem.oracle, problem.x0
        cfg = FDConfig(1e-3, sample_mode="consistent")
        oracle.pin_batch(1, 0)
        first = fd_gradient(oracle, x, cfg, region=problem.region)
        second = fd_gradient(oracle, x, cfg, region=problem.region)
        np.testing.assert_array_equal(first, second)
        self.assertIsNotNone(oracle.pinned_batch)

    def test_consistent_mode_pins_its_own_batch(self) -> None:
        """Test that consistent FD without a pinned batch pins and releases one."""
        problem = make_surrogate_problem(SurrogateSpec(batch_size=10, seed=1))
        oracle, x = problem.oracle, problem.x0
        g = fd_gradient(oracle, x, FDConfig(1e-3, sample_mode="consistent"))
        self.assertIsNone(oracle.pinned_batch)
        self.assertEqual(g.shape, (6,))
        self.assertLess(np.linalg.norm(g), 10.0)

    def test_concurrent_matches_sequential(self) -> None:
        """Test that worker threads give the same gradient as a sequential loop."""
        results = []
        for workers in (1, 4):
            problem = make_surrogate_problem(SurrogateSpec(batch_size=10, seed=6))
            results.append(
                fd_gradient(
                    problem.oracle,
                    problem.x0,
                    FDConfig(1e-2, workers=workers),
                    region=problem.region,
                )
            )
            self.assertEqual(problem.oracle.calls, 7)
        np.testing.assert_array_equal(results[0], results[1])


if __name__ == "__main__":
    unittest.main()
