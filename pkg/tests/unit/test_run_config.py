#!/usr/bin/env python3
# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.

"""Test run-config parsing, validation and overrides."""

import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import yaml
from errors import InvalidConfigError
from finite_difference import optimal_interval
from run_config import load_run_config, parse_run_config, replication_config

MINIMAL = {
    "version": 1,
    "problem": {"family": "quadratic", "batch-size": 10},
    "solver": {"gradient-source": "analytic"},
}


def with_sections(**sections):
    data = dict(MINIMAL)
    data.update({key.replace("_", "-"): value for key, value in sections.items()})
    return data


class TestParseRunConfig(unittest.TestCase):
    def test_minimal_config(self) -> None:
        """Test the defaults of a minimal config."""
        config = parse_run_config(MINIMAL)
        self.assertEqual(config.problem.family, "quadratic")
        self.assertEqual(config.problem.batch_size, 10)
        self.assertEqual(list(config.solvers), ["gp-ls"])
        self.assertEqual(config.solver.alpha0, 1.0)
        self.assertEqual(config.experiment.replications, 1)
        self.assertEqual(config.output.format, "csv")

    def test_version_is_required(self) -> None:
        """Test that a missing or wrong version is rejected."""
        with self.assertRaises(InvalidConfigError):
            parse_run_config({"problem": {}})
        with self.assertRaises(InvalidConfigError):
            parse_run_config({"version": 2})

    def test_unknown_key_is_named(self) -> None:
        """Test that unknown keys raise an error naming the key."""
        with self.assertRaises(InvalidConfigError) as cm:
            parse_run_config(
                with_sections(solver={"gradient-source": "analytic", "step-size": 0.1})
            )
        self.assertIn("step-size", cm.exception.message)
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(plots={}))

    def test_not_a_mapping(self) -> None:
        """Test that documents and sections must be mappings."""
        with self.assertRaises(InvalidConfigError):
            parse_run_config([1, 2])
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(experiment=[1]))
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(solver="gp-ls"))

    def test_string_numbers_are_coerced(self) -> None:
        """Test that numbers PyYAML leaves as strings are accepted."""
        config = parse_run_config(
            with_sections(
                solver={"gradient-source": "analytic", "eps-A": "1e-3", "max-iterations": "20"}
            )
        )
        self.assertEqual(config.solver.eps_A, 1e-3)
        self.assertEqual(config.solver.max_iterations, 20)
        with self.assertRaises(InvalidConfigError):
            parse_run_config(
                with_sections(solver={"gradient-source": "analytic", "max-iterations": 2.5})
            )
        with self.assertRaises(InvalidConfigError):
            parse_run_config(
                with_sections(solver={"gradient-source": "analytic", "alpha0": "large"})
            )

    def test_relaxation_from_noise_level(self) -> None:
        """Test that eps-f without eps-A gives eps_A = lambda eps_f."""
        config = parse_run_config(with_sections(solver={"eps-f": 1e-3, "lambda": 2.0}))
        self.assertEqual(config.solver.eps_A, 2e-3)
        config = parse_run_config(with_sections(solver={"eps-f": 1e-3, "eps-A": 5e-4}))
        self.assertEqual(config.solver.eps_A, 5e-4)

    def test_auto_interval(self) -> None:
        """Test that the auto FD interval uses eps-f and the problem's L."""
        config = parse_run_config(with_sections(solver={"eps-f": 1e-4}))
        self.assertAlmostEqual(config.solver.fd.interval, optimal_interval(1e-4, 10.0))
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(solver={}))

    def test_explicit_fd_section(self) -> None:
        """Test an explicit FD section."""
        config = parse_run_config(
            with_sections(
                solver={"fd": {"interval": 0.01, "sample-mode": "consistent", "scheme": "central"}}
            )
        )
        self.assertEqual(config.solver.fd.interval, 0.01)
        self.assertTrue(config.solver.consistent)
        with self.assertRaises(InvalidConfigError):
            parse_run_config(
                with_sections(solver={"gradient-source": "analytic", "fd": {"interval": 0.01}})
            )

    def test_analytic_solver_needs_no_fd(self) -> None:
        """Test an analytic solver without FD settings."""
        config = parse_run_config(with_sections(solver={"gradient-source": "analytic"}))
        self.assertIsNone(config.solver.fd)

    def test_solvers_mapping(self) -> None:
        """Test named solvers and the single-solver accessor."""
        config = parse_run_config(
            with_sections(
                solvers={
                    "fixed": {"mode": "gp-f", "alpha0": 0.01, "gradient-source": "analytic"},
                    "relaxed": {"gradient-source": "analytic", "alpha0": 0.5},
                }
            )
        )
        self.assertEqual(list(config.solvers), ["fixed", "relaxed"])
        self.assertEqual(config.solvers["fixed"].mode, "gp-f")
        with self.assertRaises(InvalidConfigError):
            config.solver
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(solver={}, solvers={"a": {}}))
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(solvers={}))

    def test_experiment_settings_reach_solvers(self) -> None:
        """Test that the budget and reference batch size are copied to each solver."""
        config = parse_run_config(
            with_sections(
                solver={"gradient-source": "analytic"},
                experiment={"effort-budget": 5000, "reference-batch-size": 0},
            )
        )
        self.assertEqual(config.solver.effort_budget, 5000)
        self.assertEqual(config.solver.reference_batch_size, 0)
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(experiment={"replications": 0}))

    def test_overrides(self) -> None:
        """Test the seed, output path and format overrides."""
        config = parse_run_config(
            with_sections(solver={"gradient-source": "analytic"}),
            {"seed": 42, "out": "elsewhere", "format": "jsonl"},
        )
        self.assertEqual(config.problem.seed, 42)
        self.assertEqual(config.solver.seed, 42)
        self.assertEqual(config.output.path, "elsewhere")
        self.assertEqual(config.output.format, "jsonl")
        with self.assertRaises(InvalidConfigError):
            parse_run_config(MINIMAL, {"format": "xlsx"})

    def test_noise_section(self) -> None:
        """Test noise settings and rejection of unknown methods."""
        config = parse_run_config(
            with_sections(
                solver={"gradient-source": "analytic"},
                noise={"method": "chebyshev", "lambda": 2, "samples": 50},
            )
        )
        self.assertEqual(config.noise.lam, 2)
        self.assertEqual(config.noise.samples, 50)
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(noise={"method": "guess"}))

    def test_aggregate_comes_from_the_method(self) -> None:
        """Test that a separate aggregate key is rejected; global-min selects the minimum."""
        with self.assertRaises(InvalidConfigError) as cm:
            parse_run_config(
                with_sections(noise={"method": "global-average", "aggregate": "min"})
            )
        self.assertIn("aggregate", cm.exception.message)
        config = parse_run_config(with_sections(noise={"method": "global-min"}))
        self.assertEqual(config.noise.method, "global-min")

    @patch.dict(os.environ, {"NOISEGP_WORKERS": "3"})
    def test_workers_from_environment(self) -> None:
        """Test that NOISEGP_WORKERS sets the default worker count."""
        config = parse_run_config(with_sections(solver={"gradient-source": "analytic"}))
        self.assertEqual(config.experiment.workers, 3)
        config = parse_run_config(
            with_sections(solver={"gradient-source": "analytic"}, experiment={"workers": 1})
        )
        self.assertEqual(config.experiment.workers, 1)

    @patch.dict(os.environ, {"NOISEGP_WORKERS": "many"})
    def test_bad_workers_environment(self) -> None:
        """Test that a non-integer NOISEGP_WORKERS is a config error."""
        with self.assertRaises(InvalidConfigError):
            parse_run_config(with_sections(solver={"gradient-source": "analytic"}))

    def test_as_dict_round_trip(self) -> None:
        """Test that the merged config parses back to itself."""
        config = parse_run_config(
            with_sections(
                solver={"mode": "gp-ls-cal", "eps-f": 1e-3, "alpha0": 0.1},
                experiment={"replications": 3, "workers": 1},
            )
        )
        data = config.as_dict()
        self.assertEqual(data["solvers"]["gp-ls-cal"]["eps-A"], 1e-3)
        self.assertIn("batch-size", data["problem"])
        self.assertEqual(parse_run_config(yaml.safe_load(yaml.safe_dump(data))).as_dict(), data)

    def test_replication_config(self) -> None:
        """Test that replication i offsets both seeds by i."""
        config = parse_run_config(
            with_sections(solver={"gradient-source": "analytic"}), {"seed": 10}
        )
        problem, solver = replication_config(config, "gp-ls", 3)
        self.assertEqual((problem.seed, solver.seed), (13, 13))
        self.assertEqual(config.problem.seed, 10)


class TestLoadRunConfig(unittest.TestCase):
    def test_missing_file(self) -> None:
        """Test that a missing file is a config error naming the path."""
        with self.assertRaises(InvalidConfigError) as cm:
            load_run_config("/nonexistent/run.yaml")
        self.assertIn("/nonexistent/run.yaml", cm.exception.message)

    def test_invalid_yaml(self) -> None:
        """Test that malformed YAML is a config error."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.yaml"
            path.write_text("version: [1\n")
            with self.assertRaises(InvalidConfigError):
                load_run_config(path)

    def test_load(self) -> None:
        """Test loading a YAML file with overrides."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.yaml"
            path.write_text(
                "version: 1\n"
                "problem:\n"
                "  family: quadratic\n"
                "solver:\n"
                "  mode: gp-f\n"
                "  alpha0: 1.0e-2\n"
                "  gradient-source: analytic\n"
            )
            config = load_run_config(path, {"seed": 5})
        self.assertEqual(config.solver.mode, "gp-f")
        self.assertEqual(config.solver.alpha0, 1e-2)
        self.assertEqual(config.problem.seed, 5)


if __name__ == "__main__":
    unittest.main()
