# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Observation sets consumed by the likelihood solvers and the tests.

Each container validates its arrays on construction and is immutable.
"""
from dataclasses import dataclass
import logging
from typing import Union

import numpy as np

from calpha_het.errors import DataError

logger = logging.getLogger(__name__)


def with_intercept(covariates) -> np.ndarray:
    """Prepend a column of ones to an (n, k) covariate array.

    Args:
        covariates: Array of shape (n,) or (n, k), possibly with k = 0.
    Returns:
        The (n, k + 1) design matrix.
    """
    z = np.asarray(covariates, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    return np.column_stack([np.ones(z.shape[0]), z])


def _design(X, n: int) -> np.ndarray:
    X = np.array(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != n:
        raise DataError(f"X must be an ({n}, k+1) matrix, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite entries")
    if not np.allclose(X[:, 0], 1.0):
        raise DataError("first column of X must be the intercept")
    if n < X.shape[1]:
        raise DataError(
            f"need at least as many observations as coefficients, "
            f"got n={n} and {X.shape[1]} coefficients"
        )
    if np.linalg.matrix_rank(X) < X.shape[1]:
        logger.warning(f"Rank deficient design of shape {X.shape}")
        raise DataError("design matrix X is rank deficient")
    X.setflags(write=False)
    return X


def _first_bad_row(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0]) + 1


@dataclass(frozen=True)
class CountData:
    """Counts y with design X (intercept first)."""
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        if y.ndim != 1:
            raise DataError("y must be one-dimensional")
        if not np.all(np.isfinite(y)):
            raise DataError(
                "y contains non-finite counts",
                row=_first_bad_row(~np.isfinite(y)),
                column="y"
            )
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError(
                "counts must be nonnegative integers",
                row=_first_bad_row((y < 0) | (y != np.round(y))),
                column="y"
            )
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", _design(self.X, y.shape[0]))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        """Number of non-intercept covariates."""
        return self.X.shape[1] - 1


@dataclass(frozen=True)
class DurationData:
    """Uncensored single-spell durations t with design X."""
    t: np.ndarray
    X: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=float)
        if t.ndim != 1:
            raise DataError("t must be one-dimensional")
        bad = ~np.isfinite(t) | (t <= 0)
        if np.any(bad):
            raise DataError(
                "durations must be finite and positive",
                row=_first_bad_row(bad),
                column="t"
            )
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "X", _design(self.X, t.shape[0]))

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1] - 1


@dataclass(frozen=True)
class RegressionData:
    """Continuous responses y with design X, for the N(x'beta, 1) model."""
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        if y.ndim != 1:
            raise DataError("y must be one-dimensional")
        if not np.all(np.isfinite(y)):
            raise DataError(
                "y contains non-finite values",
                row=_first_bad_row(~np.isfinite(y)),
                column="y"
            )
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", _design(self.X, y.shape[0]))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1] - 1


@dataclass(frozen=True)
class PanelData:
    """Balanced N x T Gaussian panel."""
    Y: np.ndarray

    def __post_init__(self) -> None:
        Y = np.array(self.Y, dtype=float)
        if Y.ndim != 2:
            raise DataError("Y must be an N x T matrix")
        if Y.shape[0] < 2 or Y.shape[1] < 2:
            raise DataError(f"panel needs N >= 2 and T >= 2, got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            bad = ~np.all(np.isfinite(Y), axis=1)
            raise DataError(
                "panel contains non-finite values",
                row=_first_bad_row(bad),
                column="y"
            )
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def n(self) -> int:
        """Number of independent units."""
        return self.N


ObservationSet = Union[CountData, DurationData, PanelData, RegressionData]
