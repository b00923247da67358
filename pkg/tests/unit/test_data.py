# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
import numpy as np
import pytest

from calpha_het.data import (
    CountData,
    DurationData,
    PanelData,
    RegressionData,
    with_intercept
)
from calpha_het.errors import DataError


def test_with_intercept_shapes():
    """Ensures a ones column is prepended for vector and empty input."""
    np.testing.assert_array_equal(
        with_intercept([2.0, 3.0]), [[1.0, 2.0], [1.0, 3.0]]
    )
    assert with_intercept(np.zeros((4, 0))).shape == (4, 1)


def test_count_data_properties():
    """Ensures n and k are derived from the design."""
    d = CountData([0, 2], with_intercept([0.0, 1.0]))
    assert d.n == 2
    assert d.k == 1


@pytest.mark.parametrize(
    "y, row",
    [
        ([1.0, -1.0, 2.0], 2),
        ([1.0, 0.5, 2.0], 2),
        ([np.nan, 1.0, 2.0], 1),
    ],
)
def test_count_data_invalid_counts(y, row):
    """Ensures invalid counts report their row and column."""
    with pytest.raises(DataError) as error:
        CountData(y, np.ones((3, 1)))
    assert error.value.row == row
    assert error.value.column == "y"


@pytest.mark.parametrize("t", [[-1.0, 1.0], [0.0, 1.0], [np.inf, 1.0]])
def test_duration_data_nonpositive(t):
    """Ensures nonpositive or infinite durations fail at row 1, column t."""
    with pytest.raises(DataError) as error:
        DurationData(t, np.ones((2, 1)))
    assert (error.value.row, error.value.column) == (1, "t")


@pytest.mark.parametrize(
    "X, message",
    [
        (np.ones((3, 2)), "rank deficient"),
        (np.column_stack([np.zeros(3), np.ones(3)]), "intercept"),
        (np.ones((2, 1)), "matrix"),
        (np.ones((1, 2)), "matrix"),
    ],
)
def test_design_validation(X, message):
    """Ensures malformed designs raise DataError."""
    with pytest.raises(DataError, match=message):
        RegressionData(np.array([1.0, 2.0, 3.0]), X)


def test_design_needs_enough_rows():
    """Ensures fewer observations than coefficients are rejected."""
    with pytest.raises(DataError, match="at least as many"):
        RegressionData([1.0], with_intercept(np.array([[1.0, 2.0]])))


def test_observation_sets_are_read_only():
    """Ensures stored arrays are frozen copies of the caller's arrays."""
    y = np.array([1.0, 2.0, 3.0])
    d = RegressionData(y, np.ones((3, 1)))
    y[0] = 10.0
    assert d.y[0] == 1.0
    with pytest.raises(ValueError):
        d.y[1] = 0.0
    with pytest.raises(ValueError):
        d.X[0, 0] = 0.0


def test_panel_data_shape_and_values():
    """Ensures panels are N x T with N, T >= 2 and finite values."""
    d = PanelData(np.arange(6.0).reshape(3, 2))
    assert (d.N, d.T, d.n) == (3, 2, 3)
    with pytest.raises(DataError, match="N >= 2"):
        PanelData(np.ones((3, 1)))
    with pytest.raises(DataError) as error:
        PanelData([[1.0, 2.0], [np.nan, 1.0]])
    assert error.value.row == 2
