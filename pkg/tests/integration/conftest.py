#!/usr/bin/env python3
# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.

"""Configure noisegp integration tests."""

import logging
import os
from pathlib import Path
from typing import List

import pytest

logger = logging.getLogger(__name__)
CONFIGS_DIR = Path(os.getenv("NOISEGP_CONFIGS_DIR", Path(__file__).parents[2] / "configs"))


def pytest_addoption(parser) -> None:
    parser.addoption(
        "--seeds",
        action="store",
        type=int,
        default=10,
        help="Number of seeded replications for the statistical checks",
    )


@pytest.fixture(scope="module")
def seeds(request) -> List[int]:
    """Get the seeds of the statistical checks."""
    count = request.config.option.seeds
    logger.info(f"Running statistical checks over {count} seed(s)")
    return list(range(count))


@pytest.fixture(scope="module")
def configs_dir() -> Path:
    """Get the directory of example run configs."""
    if not CONFIGS_DIR.is_dir():
        pytest.skip(f"{CONFIGS_DIR} not found")
    return CONFIGS_DIR
