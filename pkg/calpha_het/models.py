# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Concrete heterogeneity tests

Score providers for the Poisson, exponential and Weibull proportional
hazards, Gaussian panel and Gaussian regression models. Each
`*_decomposition` evaluates scores and analytic information blocks at
arbitrary parameters; the report functions evaluate them at the
restricted MLE and attach the decision.
"""
import logging

import numpy as np

from calpha_het.config import DEFAULT_ALPHA
from calpha_het.core import (
    ScoreDecomposition,
    diagonal_statistic,
    scalar_report
)
from calpha_het.data import (
    CountData,
    DurationData,
    PanelData,
    RegressionData
)
from calpha_het.errors import ConvergenceError, DataError, DomainError
from calpha_het.mle import (
    fit_exponential_ph,
    fit_gaussian_panel,
    fit_poisson,
    fit_weibull_ph
)
from calpha_het.numerics import digamma, trigamma
from calpha_het.schemas import (
    FitResult,
    KSpec,
    TestId,
    TestReport,
    WeibullVariance
)

PSI2 = digamma(2.0)
TRIGAMMA2 = trigamma(2.0)
WEIBULL_Q = 1.0 + TRIGAMMA2 - PSI2 ** 2
SCORE_EQUATION_RTOL = 1e-6
DEGENERATE_COUNTS = "degenerate_counts"

logger = logging.getLogger(__name__)


def _check_score_equation(score_sum, scale: float, name: str) -> None:
    """Raise unless the nuisance scores sum to zero at the plug-in."""
    norm = float(np.linalg.norm(score_sum))
    if norm > SCORE_EQUATION_RTOL * (1.0 + scale):
        logger.warning(f"{name}: nuisance score norm {norm:.3e} at plug-in")
        raise ConvergenceError(
            f"{name} needs the restricted MLE; score norm is {norm:.3e}"
        )


def _beta_estimates(beta) -> dict[str, float]:
    return {f"beta{j}": float(b) for j, b in enumerate(beta)}


def _check_beta(beta, X: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != X.shape[1]:
        raise ValueError(
            f"beta has {beta.shape[0]} entries, design has {X.shape[1]}"
        )
    return beta


def k_squared(k: KSpec, level: np.ndarray) -> np.ndarray:
    """Squared heterogeneity scale k(level)^2 for a k specification.

    Raises:
        DomainError: If `k` is "sqrt" and some level is negative.
        ValueError: If `k` is unknown.
    """
    if k == "constant":
        return np.ones_like(level)
    if k == "identity":
        return level * level
    if k == "sqrt":
        if np.any(level < 0):
            raise DomainError("k = sqrt needs nonnegative levels")
        return level.copy()
    raise ValueError(f"Unknown heterogeneity scale {k!r}")


# Poisson


def poisson_decomposition(d: CountData, beta) -> ScoreDecomposition:
    """Multiplicative heterogeneity lambda_i = lambda_0i exp(xi U_i).

    Args:
        d: Count data.
        beta: Coefficients at which to evaluate.
    Returns:
        Second-order scores 1/2 [(y - lambda)^2 - lambda] with analytic
        information.
    """
    beta = _check_beta(beta, d.X)
    lam = np.exp(d.X @ beta)
    r = d.y - lam
    xi = 0.5 * (r * r - lam)
    theta = r[:, None] * d.X
    J_xx = np.array([[0.25 * np.mean(2.0 * lam * lam + lam)]])
    J_xt = 0.5 * (lam @ d.X)[None, :] / d.n
    J_tt = (d.X * lam[:, None]).T @ d.X / d.n
    return ScoreDecomposition(xi, theta, J_xx, J_xt, J_tt)


def poisson_k_decomposition(
        d: CountData,
        beta,
        k: KSpec
) -> ScoreDecomposition:
    """Additive heterogeneity lambda_i = lambda_0i + xi k(lambda_0i) U_i.

    The second-order score k^2 [(y - lambda)^2 - y] / lambda^2 is
    orthogonal to the nuisance scores.
    """
    beta = _check_beta(beta, d.X)
    lam = np.exp(d.X @ beta)
    r = d.y - lam
    k2 = k_squared(k, lam)
    xi = 0.5 * k2 * (r * r - d.y) / (lam * lam)
    theta = r[:, None] * d.X
    J_xx = np.array([[0.5 * np.mean(k2 * k2 / (lam * lam))]])
    J_xt = np.zeros((1, d.X.shape[1]))
    J_tt = (d.X * lam[:, None]).T @ d.X / d.n
    return ScoreDecomposition(xi, theta, J_xx, J_xt, J_tt)


def _count_warnings(d: CountData) -> list[str]:
    if np.all(d.y == d.y[0]):
        logger.warning("All counts are equal; statistic is degenerate")
        return [DEGENERATE_COUNTS]
    return []


def _poisson_report(
        d: CountData,
        beta_hat,
        sd: ScoreDecomposition,
        alpha: float,
        test: str
) -> TestReport:
    lam = np.exp(d.X @ np.asarray(beta_hat, dtype=float))
    _check_score_equation(
        (d.y - lam) @ d.X, float(np.sum(d.y)), test
    )
    return scalar_report(
        sd,
        alpha,
        test,
        nuisance_estimates=_beta_estimates(beta_hat),
        warnings=_count_warnings(d)
    )


def poisson_second_moment(
        d: CountData,
        beta_hat,
        alpha: float = DEFAULT_ALPHA
) -> TestReport:
    """Second moment test for overdispersion in Poisson regression.

    Z = sum[(y - lambda)^2 - lambda] / sqrt(2 sum lambda^2) at the MLE.

    Args:
        d: Count data.
        beta_hat: Restricted MLE of the coefficients.
        alpha: Test level.
    Returns:
        The test report.
    Raises:
        ConvergenceError: If `beta_hat` does not solve the normal
        equations.
    """
    sd = poisson_decomposition(d, beta_hat)
    return _poisson_report(d, beta_hat, sd, alpha, "poisson-secmom")


def poisson_second_factorial(
        d: CountData,
        beta_hat,
        alpha: float = DEFAULT_ALPHA
) -> TestReport:
    """Second factorial moment test, heterogeneity scale sqrt(lambda).

    Z = (2n)^(-1/2) sum [y(y - 1) - lambda^2] / lambda at the MLE.
    """
    sd = poisson_k_decomposition(d, beta_hat, "sqrt")
    return _poisson_report(d, beta_hat, sd, alpha, "poisson-secfac")


# Proportional hazards


def _hazard_scores(q: np.ndarray) -> np.ndarray:
    """1 - 3q + q^2, the frailty second-order score in integrated hazard."""
    return 1.0 - 3.0 * q + q * q


def exponential_decomposition(d: DurationData, beta) -> ScoreDecomposition:
    """Multiplicative frailty on a constant hazard exp(x'beta)."""
    beta = _check_beta(beta, d.X)
    q = d.t * np.exp(d.X @ beta)
    xi = 0.5 * _hazard_scores(q)
    theta = (1.0 - q)[:, None] * d.X
    J_xx = np.array([[1.25]])
    J_xt = -0.5 * d.X.mean(axis=0)[None, :]
    J_tt = d.X.T @ d.X / d.n
    return ScoreDecomposition(xi, theta, J_xx, J_xt, J_tt)


def cox_exp_frailty(
        d: DurationData,
        beta_hat,
        alpha: float = DEFAULT_ALPHA
) -> TestReport:
    """Frailty test with an exponential baseline.

    Z = sum(1 - 3q + q^2) / sqrt(4n), q = t exp(x'beta_hat).

    Raises:
        ConvergenceError: If `beta_hat` does not solve the score equations.
    """
    sd = exponential_decomposition(d, beta_hat)
    _check_score_equation(sd.theta_scores.sum(axis=0), d.n, "cox-exp")
    return scalar_report(
        sd, alpha, "cox-exp", nuisance_estimates=_beta_estimates(beta_hat)
    )


def weibull_information(
        X,
        beta,
        alpha: float,
        variance: WeibullVariance = "classic"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Total information blocks of the Weibull frailty model.

    Nuisance ordering is (beta_0..beta_k, alpha). The "classic" variant
    drops psi(2)^2 from the shape information, which yields the residual
    variance n(4 - 4/q) with q = 1 + psi'(2) - psi(2)^2; "expected" is
    the exact expectation, residual n(4 - 4/(1 + psi'(2))).

    Args:
        X: (n, k+1) design.
        beta: Coefficients.
        alpha: Weibull shape, > 0.
        variance: "classic" or "expected".
    Returns:
        A tuple (I_xx, I_xt, I_tt) of summed, unhalved information.
    Raises:
        DomainError: If `alpha` is not positive.
    """
    if not alpha > 0:
        raise DomainError(f"Weibull shape must be positive, got {alpha!r}")
    if variance not in ("classic", "expected"):
        raise ValueError(f"Unknown Weibull variance {variance!r}")
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    c = X @ np.asarray(beta, dtype=float)
    psi_sq = PSI2 ** 2 if variance == "expected" else 0.0
    I_xx = np.array([[5.0 * n]])
    I_xt = np.concatenate([
        -X.sum(axis=0),
        [np.sum(-2.0 - PSI2 + c) / alpha]
    ])[None, :]
    I_tt = np.empty((p + 1, p + 1))
    I_tt[:p, :p] = X.T @ X
    I_tt[:p, p] = I_tt[p, :p] = X.T @ (PSI2 - c) / alpha
    I_tt[p, p] = np.sum(
        1.0 + TRIGAMMA2 + psi_sq - 2.0 * PSI2 * c + c * c
    ) / alpha ** 2
    return I_xx, I_xt, I_tt


def weibull_decomposition(
        d: DurationData,
        beta,
        alpha: float,
        variance: WeibullVariance = "classic"
) -> ScoreDecomposition:
    """Frailty on a Weibull baseline hazard alpha t^(alpha-1) exp(x'beta)."""
    beta = _check_beta(beta, d.X)
    I_xx, I_xt, I_tt = weibull_information(d.X, beta, alpha, variance)
    q = d.t ** alpha * np.exp(d.X @ beta)
    xi = 0.5 * _hazard_scores(q)
    theta = np.column_stack([
        (1.0 - q)[:, None] * d.X,
        1.0 / alpha + np.log(d.t) * (1.0 - q)
    ])
    return ScoreDecomposition(
        xi, theta, 0.25 * I_xx / d.n, 0.5 * I_xt / d.n, I_tt / d.n
    )


def cox_weibull_frailty(
        d: DurationData,
        beta_hat,
        alpha_hat: float,
        alpha: float = DEFAULT_ALPHA,
        variance: WeibullVariance = "classic"
) -> TestReport:
    """Frailty test with a Weibull baseline.

    With the classic variance,
    Z = sum(1 - 3q + q^2) / sqrt(4n - 4n/q_w), q_w = 1.4661874756.

    Args:
        d: Duration data.
        beta_hat: Restricted MLE of the coefficients.
        alpha_hat: Restricted MLE of the shape.
        alpha: Test level.
        variance: "classic" or "expected" shape information.
    Returns:
        The test report.
    Raises:
        DomainError: If `alpha_hat` is not positive.
        ConvergenceError: If (beta_hat, alpha_hat) do not solve the
        Weibull score equations.
    """
    sd = weibull_decomposition(d, beta_hat, alpha_hat, variance)
    _check_score_equation(sd.theta_scores.sum(axis=0), d.n, "cox-weibull")
    estimates = {**_beta_estimates(beta_hat), "alpha": float(alpha_hat)}
    return scalar_report(sd, alpha, "cox-weibull", estimates)


# Gaussian panel


def gaussian_panel_information(N: int, T: int, sigma2: float) -> np.ndarray:
    """Total 4x4 information of the Gaussian panel heterogeneity model.

    Ordering: mean heterogeneity, variance heterogeneity, mu, sigma2.
    """
    if sigma2 <= 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2!r}")
    s2 = sigma2
    return (N * T / s2 ** 2) * np.array([
        [2.0 * T, s2, 0.0, 1.0],
        [s2, (T + 3.0) * s2 ** 2 / 2.0, 0.0, s2 / 2.0],
        [0.0, 0.0, s2, 0.0],
        [1.0, s2 / 2.0, 0.0, 0.5]
    ])


def panel_decomposition(
        d: PanelData,
        mu: float,
        sigma2: float
) -> ScoreDecomposition:
    """Joint mean and variance heterogeneity in a balanced panel."""
    N, T = d.N, d.T
    info = gaussian_panel_information(N, T, sigma2)
    W = T * (d.Y.mean(axis=1) - mu) / sigma2
    Z = np.sum((d.Y - mu) ** 2, axis=1) / (2.0 * sigma2)
    v1 = W * W - T / sigma2
    v2 = (Z - T / 2.0) ** 2 - Z
    xi = 0.5 * np.column_stack([v1, v2])
    theta = np.column_stack([W, (Z - T / 2.0) / sigma2])
    return ScoreDecomposition(
        xi,
        theta,
        0.25 * info[:2, :2] / N,
        0.5 * info[:2, 2:] / N,
        info[2:, 2:] / N
    )


def gaussian_panel_joint(
        d: PanelData,
        mu_hat: float,
        sigma2_hat: float,
        alpha: float = DEFAULT_ALPHA
) -> TestReport:
    """Joint one-sided test of mean and variance heterogeneity.

    T_n = (0 v t1)^2 + (0 v t2)^2 against 1/4 chi2(0) + 1/2 chi2(1) +
    1/4 chi2(2).

    Raises:
        DataError: If the panel has zero variance.
        ConvergenceError: If (mu_hat, sigma2_hat) are not the panel MLE.
    """
    if sigma2_hat <= 0:
        raise DataError("panel has zero variance")
    sd = panel_decomposition(d, mu_hat, sigma2_hat)
    _check_score_equation(
        sd.theta_scores.sum(axis=0), d.N * d.T, "gaussian-panel"
    )
    report = diagonal_statistic(
        sd,
        alpha,
        "gaussian-panel",
        {"mu": float(mu_hat), "sigma2": float(sigma2_hat)}
    )
    logger.info(
        f"gaussian-panel: T={report.statistic:.6g}, reject={report.reject}"
    )
    return report


# Gaussian regression


def gaussian_regression_k_decomposition(
        d: RegressionData,
        beta,
        k: KSpec
) -> ScoreDecomposition:
    """Additive heterogeneity mu_i = x'beta + xi k(mu_i) U_i, unit variance."""
    beta = _check_beta(beta, d.X)
    mu = d.X @ beta
    e = d.y - mu
    k2 = k_squared(k, mu)
    xi = 0.5 * k2 * (e * e - 1.0)
    J_xx = np.array([[0.5 * np.mean(k2 * k2)]])
    return ScoreDecomposition(
        xi,
        e[:, None] * d.X,
        J_xx,
        np.zeros((1, d.X.shape[1])),
        d.X.T @ d.X / d.n
    )


# Pipeline


def run_test(
        test: TestId,
        data,
        alpha: float = DEFAULT_ALPHA,
        variance: WeibullVariance = "classic"
) -> tuple[TestReport, FitResult]:
    """Fit the restricted model and run one named test.

    Args:
        test: Test id.
        data: Observation set matching the test.
        alpha: Test level.
        variance: Weibull shape information variant.
    Returns:
        A tuple (report, fit).
    Raises:
        TypeError: If `data` does not match the test.
        ConvergenceError: If the restricted fit fails.
    """
    expected = {
        "poisson-secmom": CountData,
        "poisson-secfac": CountData,
        "cox-exp": DurationData,
        "cox-weibull": DurationData,
        "gaussian-panel": PanelData
    }
    if test not in expected:
        raise ValueError(f"Unknown test {test!r}")
    if not isinstance(data, expected[test]):
        raise TypeError(
            f"{test} needs {expected[test].__name__}, "
            f"got {type(data).__name__}"
        )
    if test == "poisson-secmom":
        fit = fit_poisson(data)
        return poisson_second_moment(data, fit.beta, alpha), fit
    if test == "poisson-secfac":
        fit = fit_poisson(data)
        return poisson_second_factorial(data, fit.beta, alpha), fit
    if test == "cox-exp":
        fit = fit_exponential_ph(data)
        return cox_exp_frailty(data, fit.beta, alpha), fit
    if test == "cox-weibull":
        fit = fit_weibull_ph(data)
        report = cox_weibull_frailty(
            data, fit.beta, fit.estimates["alpha"], alpha, variance
        )
        return report, fit
    fit = fit_gaussian_panel(data)
    report = gaussian_panel_joint(
        data, fit.estimates["mu"], fit.estimates["sigma2"], alpha
    )
    return report, fit


def weibull_residual_constant(variance: WeibullVariance = "classic") -> float:
    """Per-observation residual variance 4 - 4/q of the unhalved score."""
    q = WEIBULL_Q if variance == "classic" else 1.0 + TRIGAMMA2
    return 4.0 - 4.0 / q

