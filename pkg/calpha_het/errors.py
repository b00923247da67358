# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Exception hierarchy shared by all modules."""


class CalphaError(Exception):
    """Base class for errors raised by calpha_het."""


class DomainError(CalphaError, ValueError):
    """An argument lies outside the domain of a numerical function."""


class SingularityError(CalphaError, ValueError):
    """An information block or covariance matrix is not positive definite."""


class DataError(CalphaError, ValueError):
    """Observations are invalid for the requested model.

    Attributes:
        row: 1-based data row of the offending cell, if known.
        column: Column name of the offending cell, if known.
    """

    def __init__(
            self,
            message: str,
            row: int | None = None,
            column: str | None = None
    ) -> None:
        super().__init__(message)
        self.row = row
        self.column = column


class ConvergenceError(CalphaError, RuntimeError):
    """A likelihood solver stopped before reaching its tolerance.

    Attributes:
        fit: The partial fit at the point the solver gave up, if any.
    """

    def __init__(self, message: str, fit=None) -> None:
        super().__init__(message)
        self.fit = fit
