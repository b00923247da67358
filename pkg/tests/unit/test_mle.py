# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
from functools import partial
from math import log

import numpy as np
import pytest
from scipy import optimize

from calpha_het.data import (
    CountData,
    DurationData,
    PanelData,
    RegressionData,
    with_intercept
)
from calpha_het.errors import ConvergenceError, DataError
from calpha_het.mle import (
    fit_exponential_ph,
    fit_gaussian_panel,
    fit_gaussian_regression,
    fit_poisson,
    fit_weibull_ph,
    profile_weibull_shape
)


@pytest.fixture
def weibull_data() -> DurationData:
    """Returns 2000 Weibull(1.5) durations with one uniform covariate."""
    rng = np.random.default_rng(2025)
    z = rng.uniform(size=2000)
    X = with_intercept(z)
    rate = np.exp(X @ [0.2, 0.5])
    t = (rng.exponential(size=2000) / rate) ** (1.0 / 1.5)
    return DurationData(t, X)


def _is_ascending(trace: list[float]) -> bool:
    trace = np.asarray(trace)
    slack = 1e-9 * np.max(np.abs(trace))
    return bool(np.all(np.diff(trace) >= -slack))


def test_fit_poisson_two_groups():
    """Ensures the Poisson MLE equals the log group means."""
    X = with_intercept([0.0, 0.0, 1.0, 1.0])
    fit = fit_poisson(CountData(np.array([0.0, 1.0, 2.0, 3.0]), X))
    np.testing.assert_allclose(fit.beta, [log(0.5), log(5.0)], atol=1e-9)
    assert fit.converged is True
    assert fit.gradient_norm < fit.tolerance
    assert _is_ascending(fit.trace)


def test_fit_poisson_random_design():
    """Ensures the Poisson fit solves the normal equations."""
    rng = np.random.default_rng(8)
    X = with_intercept(rng.normal(size=(500, 2)))
    y = rng.poisson(np.exp(X @ [1.0, 0.3, -0.4]))
    fit = fit_poisson(CountData(y, X))
    residual = X.T @ (y - np.exp(X @ fit.beta))
    assert np.linalg.norm(residual) < 1e-10 * (1 + y.sum())
    assert _is_ascending(fit.trace)


def test_fit_poisson_all_zero():
    """Ensures all-zero counts raise DataError."""
    with pytest.raises(DataError, match="positive count"):
        fit_poisson(CountData(np.zeros(5), np.ones((5, 1))))


def test_fit_poisson_separation():
    """Ensures a diverging coefficient raises ConvergenceError."""
    X = with_intercept([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(ConvergenceError):
        fit_poisson(CountData(np.array([1.0, 2.0, 0.0, 0.0]), X))


def test_fit_exponential_intercept():
    """Ensures the exponential MLE is log(n / sum t)."""
    d = DurationData(np.array([1.0, 2.0, 3.0]), np.ones((3, 1)))
    fit = fit_exponential_ph(d)
    assert fit.beta[0] == pytest.approx(log(0.5), abs=1e-10)
    assert fit.loglik == pytest.approx(3 * log(0.5) - 3.0)


def test_fit_exponential_two_groups():
    """Ensures a group dummy gives the per-group rates log(n_g / T_g)."""
    t = np.array([1.0, 2.0, 3.0, 0.5, 1.5])
    d = DurationData(t, with_intercept([0.0, 0.0, 0.0, 1.0, 1.0]))
    beta0 = log(3.0 / 6.0)
    beta1 = log(2.0 / 2.0) - beta0
    fit = fit_exponential_ph(d)
    np.testing.assert_allclose(fit.beta, [beta0, beta1], atol=1e-10)


def test_fit_weibull(weibull_data):
    """Ensures the Weibull fit recovers the generating parameters."""
    fit = fit_weibull_ph(weibull_data)
    assert fit.converged is True
    assert fit.estimates["alpha"] == pytest.approx(1.5, abs=0.1)
    np.testing.assert_allclose(fit.beta, [0.2, 0.5], atol=0.2)
    assert _is_ascending(fit.trace)


def _weibull_negative_loglik(params: np.ndarray, t: np.ndarray) -> float:
    beta0, alpha = params
    if alpha <= 0.0:
        return np.inf
    return -float(np.sum(
        np.log(alpha) + (alpha - 1.0) * np.log(t) + beta0
        - t ** alpha * np.exp(beta0)
    ))


def test_fit_weibull_matches_grid_search():
    """Ensures the Weibull MLE of t = (1, 2, 4) is the grid maximum."""
    t = np.array([1.0, 2.0, 4.0])
    fit = fit_weibull_ph(DurationData(t, np.ones((3, 1))))
    finish = partial(
        optimize.fmin, xtol=1e-12, ftol=1e-14, maxiter=5000, maxfun=10000
    )
    grid = optimize.brute(
        _weibull_negative_loglik,
        ranges=((-4.0, 0.0), (0.5, 5.0)),
        args=(t,),
        Ns=81,
        finish=finish
    )
    assert fit.beta[0] == pytest.approx(grid[0], abs=1e-4)
    assert fit.estimates["alpha"] == pytest.approx(grid[1], abs=1e-4)


def test_fit_weibull_exponential_data():
    """Ensures the shape estimate is near 1 on exponential durations."""
    rng = np.random.default_rng(31)
    d = DurationData(rng.exponential(2.0, size=5000), np.ones((5000, 1)))
    fit = fit_weibull_ph(d)
    assert fit.estimates["alpha"] == pytest.approx(1.0, abs=0.05)


def test_profile_agrees_with_newton(weibull_data):
    """Ensures the profile search lands on the Newton solution."""
    alpha, beta = profile_weibull_shape(weibull_data)
    fit = fit_weibull_ph(weibull_data)
    assert alpha == pytest.approx(fit.estimates["alpha"], rel=1e-5)
    np.testing.assert_allclose(beta, fit.beta, atol=1e-4)


def test_fit_weibull_equal_durations():
    """Ensures equal durations raise DataError."""
    d = DurationData(np.full(5, 2.0), np.ones((5, 1)))
    with pytest.raises(DataError, match="unidentified"):
        fit_weibull_ph(d)


def test_fit_gaussian_panel():
    """Ensures the panel MLE is the grand mean and biased variance."""
    Y = np.array([[1.0, -1.0], [-1.0, 1.0], [2.0, 0.0]])
    fit = fit_gaussian_panel(PanelData(Y))
    assert fit.estimates["mu"] == pytest.approx(1.0 / 3.0)
    assert fit.estimates["sigma2"] == pytest.approx(np.var(Y))
    assert fit.converged is True


def test_fit_gaussian_panel_zero_variance():
    """Ensures a constant panel raises DataError."""
    with pytest.raises(DataError, match="zero variance"):
        fit_gaussian_panel(PanelData(np.ones((3, 2))))


def test_fit_gaussian_regression():
    """Ensures least squares recovers an exact linear fit."""
    X = with_intercept([0.0, 1.0, 2.0, 3.0])
    fit = fit_gaussian_regression(RegressionData(X @ [1.0, 2.0], X))
    np.testing.assert_allclose(fit.beta, [1.0, 2.0], atol=1e-12)
    assert fit.gradient_norm < fit.tolerance


def test_convergence_error_carries_fit():
    """Ensures a failed fit reports its partial state."""
    X = with_intercept([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(ConvergenceError) as error:
        fit_poisson(CountData(np.array([1.0, 2.0, 0.0, 0.0]), X))
    if error.value.fit is not None:
        assert error.value.fit.converged is False
