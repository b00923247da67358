# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Command-line entrypoint for the C(alpha) heterogeneity toolkit"""
import sys

from calpha_het.cli import main

if __name__ == "__main__":
    sys.exit(main())
