# Copyright 2024 noisegp contributors
# See LICENSE file for licensing details.
"""This module provides constants for noisegp."""
import numpy as np

CONFIG_VERSION = 1
WORKERS_ENV_VAR = "NOISEGP_WORKERS"

# Feasibility tolerance for projections and iterates.
PROJECTION_TOL = 1e-12

# Solver defaults.
DEFAULT_SOLVER_PARAMETERS = {
    "mode": "gp-ls",
    "alpha0": 1.0,
    "rho": 0.5,
    "c": 1e-4,
    "eps-A": 1e-3,
    "lambda": 1.0,
    "T": 5,
    "max-iterations": 1000,
    "gradient-source": "finite-difference",
    "stationarity-tol": 0.0,
    "stationarity-patience": 10,
    "seed": 0,
}
GP_LS_MAX_BACKTRACKS = 60

# Self-calibration rules.
CALIBRATION_HIGH_BACKTRACKS = 3.0
CALIBRATION_LOW_BACKTRACKS = 0.1
CALIBRATION_GROW = 1.5
CALIBRATION_SHRINK = 0.5
CALIBRATION_EPS_A_FLOOR = 1e-5
CALIBRATION_ALPHA0_FLOOR = 1e-5
CALIBRATION_ALPHA0_CEILING = 1e-1
CALIBRATION_EPS_A_CAP_FACTOR = 2.0
CALIBRATION_BACKTRACK_CAP_FACTOR = 3

# Finite differences.
MACHINE_EPS = float(np.finfo(float).eps)
H_NOISE_FREE = MACHINE_EPS ** (1.0 / 3.0)
H_MIN = MACHINE_EPS
FD_INTERVAL_CONSTANT = 8.0**0.25

# Noise estimation.
CHEBYSHEV_LAMBDA = 3
DIFFERENCE_TABLE_POINTS = 8
DIFFERENCE_TABLE_AGREEMENT = 4.0

# Reporting.
REFERENCE_BATCH_SIZE = 100
MOVING_AVERAGE_WINDOW = 50
RESULTS_COLUMNS = (
    "replication",
    "k",
    "f_noisy",
    "f_reference",
    "beta",
    "backtracks",
    "stationarity",
    "effort",
    "eps_A",
    "alpha0",
)
SUMMARY_COLUMNS = (
    "solver",
    "replications",
    "diverged",
    "final_moving_average",
    "final_effort",
    "total_backtracks",
    "cap_hits",
)

# Stream tags keep fresh, reference and computational-noise draws apart.
FRESH_STREAM = 0
REFERENCE_STREAM = 1
PINNED_STREAM = 2

# Horn surrogate: three uncertain parameters per sample.
HORN_DIMENSION = 6
HORN_LOWER = 0.0
HORN_UPPER = 1.0
HORN_WAVE_NUMBER = (1.3, 1.5)
HORN_IMPEDANCE_MEAN = 50.0
HORN_IMPEDANCE_STD = 3.0
HORN_SMOOTHING = 1e-6
HORN_TARGET = (0.18, 0.31, 0.22, 0.27, 0.14, 0.25)
# Mean response: floor + curvature/2 * |d|^2 + ripples, per flare coordinate.
HORN_FLOOR = 0.08
HORN_CURVATURE = 0.2
HORN_RIPPLE = 0.002
# Response spread kappa(b) = base + slope * mean(b); sets the noise level.
HORN_SPREAD = (0.02, 0.006)
HORN_COUPLING = 0.004
