#!/usr/bin/env python3
# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.

"""noisegp command line."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import yaml
from errors import InvalidConfigError, NoiseGPError
from harness import ExperimentManager
from noise import NOISE_METHODS
from run_config import OUTPUT_FORMATS, RunConfig, load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Report usage errors as config errors (exit 1) instead of exiting 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidConfigError(message)


def _parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="noisegp", description="Noise-tolerant gradient projection experiments."
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="Logging level (default: WARNING).",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run-config file.")
    common.add_argument("--seed", type=int, help="Override the base seed.")
    common.add_argument("--out", help="Override the output directory.")
    common.add_argument("--format", choices=OUTPUT_FORMATS, help="Override the output format.")

    subparsers.add_parser("solve", parents=[common], help="Run one solver.")
    subparsers.add_parser("compare", parents=[common], help="Run every configured solver.")
    estimate = subparsers.add_parser(
        "estimate-noise", parents=[common], help="Estimate a noise level or bound."
    )
    estimate.add_argument("--method", choices=NOISE_METHODS, help="Override the noise method.")
    diagnose = subparsers.add_parser(
        "diagnose", parents=[common], help="Check a trace against the convergence theory."
    )
    diagnose.add_argument(
        "--iterates", help="Iterates file (default: <out>/results.iterates.jsonl)."
    )
    subparsers.add_parser(
        "show-config", parents=[common], help="Print the merged, validated config."
    )
    return parser


class NoiseGPCli:
    """Dispatches subcommands to the ExperimentManager."""

    def __init__(self, argv: Optional[List[str]] = None):
        self._argv = argv
        self._args: Optional[argparse.Namespace] = None

        self._command_handler_bindings: Dict[str, Callable[[RunConfig], None]] = {
            "solve": self._on_solve,
            "compare": self._on_compare,
            "estimate-noise": self._on_estimate_noise,
            "diagnose": self._on_diagnose,
            "show-config": self._on_show_config,
        }

    def run(self) -> int:
        """Run the command and return the exit status."""
        try:
            self._args = _parser().parse_args(self._argv)
            logging.basicConfig(level=self._args.log_level)
            overrides = {
                "seed": self._args.seed,
                "out": self._args.out,
                "format": self._args.format,
            }
            config = load_run_config(self._args.config, overrides)
            self._command_handler_bindings[self._args.command](config)
        except InvalidConfigError as e:
            logger.error(e.message)
            print(f"noisegp: error: {e.message}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        except (NoiseGPError, OSError) as e:
            message = e.message if isinstance(e, NoiseGPError) else str(e)
            logger.error(message)
            print(f"noisegp: error: {message}", file=sys.stderr)
            return EXIT_RUNTIME_ERROR
        return EXIT_OK

    def _on_solve(self, config: RunConfig) -> None:
        """Run all replications of the single configured solver."""
        if len(config.solvers) != 1:
            raise InvalidConfigError("'solve' runs one solver; use 'compare' for 'solvers'.")
        manager = ExperimentManager(config)
        target = manager.write_solve(manager.run_experiment())
        print(target)

    def _on_compare(self, config: RunConfig) -> None:
        """Run every solver and write the per-solver tables and the summary."""
        manager = ExperimentManager(config)
        tables = manager.compare()
        target = manager.write_compare(tables)
        print(target.read_text(), end="")

    def _on_estimate_noise(self, config: RunConfig) -> None:
        """Print the noise estimate."""
        assert self._args is not None
        estimate = ExperimentManager(config).estimate_noise(self._args.method)
        print(
            yaml.safe_dump(
                {
                    "method": estimate.method,
                    "value": estimate.value,
                    "sample-count": estimate.sample_count,
                },
                sort_keys=False,
            ),
            end="",
        )

    def _on_diagnose(self, config: RunConfig) -> None:
        """Print the diagnostics report of an iterates file."""
        assert self._args is not None
        iterates = self._args.iterates or Path(config.output.path) / "results.iterates.jsonl"
        report = ExperimentManager(config).diagnose(Path(iterates))
        print(yaml.safe_dump(report, sort_keys=False), end="")

    def _on_show_config(self, config: RunConfig) -> None:
        """Print the merged config."""
        print(yaml.safe_dump(config.as_dict(), sort_keys=False), end="")


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point."""
    return NoiseGPCli(argv).run()


if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
