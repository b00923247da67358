# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Configuration settings for the C(alpha) heterogeneity toolkit"""
from os import getenv

# Versioning
APP_VERSION = "1.0.0"
REPORT_SCHEMA = "calpha-report/1"

# Default settings
DEFAULT_ALPHA = 0.05
DEFAULT_REPS = 1000
DEFAULT_SEED_BITS = 63

# Environment overrides
# CALPHA_THREADS is the default worker count and the cap on --threads
SIM_THREAD_CAP = int(getenv("CALPHA_THREADS", 0)) or None
SIM_THREADS = max(1, SIM_THREAD_CAP or 1)

# Numerical tolerances
SINGULARITY_RTOL = 1e-10
PD_RTOL = 1e-12
SYMMETRY_ATOL = 1e-12
MAX_NEWTON_ITER = 100
MAX_HALVINGS = 30

# Logging
LOGGING_LEVEL = getenv("CALPHA_LOG_LEVEL", "INFO")
LOGGING_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
