#!/usr/bin/env python3
# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.

"""Test the noisegp command line and its exit codes."""

import io
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest.mock import patch

import yaml
from errors import EstimationFailedError
from noisegp import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, main

PROBLEM = {
    "family": "quadratic",
    "dimension": 1,
    "lipschitz": 1.0,
    "strong-convexity": 1.0,
    "center": [0.0],
    "lower": -2.0,
    "upper": 2.0,
    "start": [1.0],
    "batch-size": 2,
}

SOLVER = {"mode": "gp-f", "alpha0": 0.5, "gradient-source": "analytic", "max-iterations": 3}


class TestNoiseGPCli(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.out = self.root / "out"

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def write_config(self, **sections) -> str:
        data = {
            "version": 1,
            "problem": PROBLEM,
            "solver": SOLVER,
            "experiment": {"reference-batch-size": 0, "workers": 1},
            "output": {"path": str(self.out)},
        }
        data.update({key.replace("_", "-"): value for key, value in sections.items()})
        data = {key: value for key, value in data.items() if value is not None}
        path = self.root / "run.yaml"
        path.write_text(yaml.safe_dump(data))
        return str(path)

    def run_cli(self, *argv):
        """Return (exit code, stdout, stderr)."""
        stdout, stderr = io.StringIO(), io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            code = main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()

    def test_missing_config(self) -> None:
        """Test that a missing config file exits 1."""
        code, _, err = self.run_cli("solve", "--config", str(self.root / "absent.yaml"))
        self.assertEqual(code, EXIT_CONFIG_ERROR)
        self.assertIn("absent.yaml", err)

    def test_usage_errors(self) -> None:
        """Test that unknown flags and a missing subcommand exit 1."""
        config = self.write_config()
        self.assertEqual(self.run_cli("solve", "--config", config, "--plot")[0], EXIT_CONFIG_ERROR)
        self.assertEqual(self.run_cli()[0], EXIT_CONFIG_ERROR)
        self.assertEqual(
            self.run_cli("solve", "--config", config, "--format", "xlsx")[0], EXIT_CONFIG_ERROR
        )

    def test_invalid_config(self) -> None:
        """Test that a config with an unknown key exits 1."""
        config = self.write_config(solver=dict(SOLVER, **{"step-size": 1.0}))
        code, _, err = self.run_cli("solve", "--config", config)
        self.assertEqual(code, EXIT_CONFIG_ERROR)
        self.assertIn("step-size", err)

    def test_show_config(self) -> None:
        """Test that show-config prints the merged config with overrides."""
        code, out, _ = self.run_cli("show-config", "--config", self.write_config(), "--seed", "7")
        self.assertEqual(code, EXIT_OK)
        merged = yaml.safe_load(out)
        self.assertEqual(merged["version"], 1)
        self.assertEqual(merged["problem"]["seed"], 7)
        self.assertEqual(merged["solvers"]["gp-f"]["alpha0"], 0.5)

    def test_solve_writes_results(self) -> None:
        """Test that solve writes the results table and prints its path."""
        code, out, _ = self.run_cli("solve", "--config", self.write_config())
        self.assertEqual(code, EXIT_OK)
        target = self.out / "results.csv"
        self.assertEqual(out.strip(), str(target))
        lines = target.read_text().splitlines()
        self.assertEqual(len(lines), 4)
        self.assertEqual(lines[1], "0,0,0.5,,1.0,0,0.5,2,0.0,0.5")

    def test_solve_is_reproducible(self) -> None:
        """Test that two runs with the same seed write identical files."""
        config = self.write_config(
            problem={"family": "quadratic", "noise-amplitude": 1e-3, "batch-size": 4},
            solver={"fd": {"interval": 1e-2}, "max-iterations": 5},
            experiment={"replications": 2, "workers": 1},
        )
        contents = []
        for _ in range(2):
            self.assertEqual(self.run_cli("solve", "--config", config)[0], EXIT_OK)
            contents.append((self.out / "results.csv").read_bytes())
        self.assertEqual(contents[0], contents[1])

    def test_solve_rejects_several_solvers(self) -> None:
        """Test that solve needs exactly one solver."""
        config = self.write_config(
            solvers={"a": SOLVER, "b": dict(SOLVER, alpha0=0.25)}, solver=None
        )
        self.assertEqual(self.run_cli("solve", "--config", config)[0], EXIT_CONFIG_ERROR)

    def test_compare(self) -> None:
        """Test that compare prints the summary and writes one table per solver."""
        config = self.write_config(
            solvers={"a": SOLVER, "b": dict(SOLVER, alpha0=0.25)}, solver=None
        )
        code, out, _ = self.run_cli("compare", "--config", config, "--format", "jsonl")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(out.splitlines()), 2)
        self.assertTrue((self.out / "a.jsonl").is_file())
        self.assertTrue((self.out / "summary.jsonl").is_file())

    def test_estimate_noise(self) -> None:
        """Test that estimate-noise prints the method and value."""
        config = self.write_config(
            problem={
                "family": "quadratic",
                "noise-amplitude": 1e-3,
                "statistic": "mean",
                "batch-size": 1,
            },
            noise={"samples": 50},
        )
        code, out, _ = self.run_cli("estimate-noise", "--config", config, "--method", "range")
        self.assertEqual(code, EXIT_OK)
        report = yaml.safe_load(out)
        self.assertEqual(report["method"], "range")
        self.assertEqual(report["sample-count"], 50)
        self.assertLessEqual(report["value"], 2e-3)

    def test_diagnose(self) -> None:
        """Test diagnose on the iterates written by solve."""
        config = self.write_config(
            problem={"family": "quadratic"},
            solver={
                "alpha0": 0.2,
                "c": 0.1,
                "eps-A": 1e-8,
                "gradient-source": "analytic",
                "max-iterations": 50,
            },
        )
        self.assertEqual(self.run_cli("solve", "--config", config)[0], EXIT_OK)
        code, out, _ = self.run_cli("diagnose", "--config", config)
        self.assertEqual(code, EXIT_OK)
        report = yaml.safe_load(out)
        self.assertIn("replication-0", report)
        self.assertTrue(report["replication-0"]["inequalities-hold"])

    def test_diagnose_without_iterates(self) -> None:
        """Test that diagnose without an iterates file exits 1."""
        code, _, _ = self.run_cli("diagnose", "--config", self.write_config())
        self.assertEqual(code, EXIT_CONFIG_ERROR)

    @patch(
        "noisegp.ExperimentManager.estimate_noise",
        side_effect=EstimationFailedError("no stable column", table=[]),
    )
    def test_runtime_error(self, _) -> None:
        """Test that a failure while running exits 2."""
        code, _, err = self.run_cli("estimate-noise", "--config", self.write_config())
        self.assertEqual(code, EXIT_RUNTIME_ERROR)
        self.assertIn("no stable column", err)


if __name__ == "__main__":
    unittest.main()
