# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Model-agnostic C(alpha) machinery

Projects second-order scores on the nuisance scores and turns the
residual into the scalar statistic Z_n, the bivariate cone statistic
T_n or the diagonal q-dimensional statistic, each with its decision.
The regular (first-order) C(alpha) test is included for comparison.

Scores follow one convention throughout: `xi_scores` hold
1/2 * d^2 p / p per observation, and the J blocks are per-observation
average information.
"""
from dataclasses import dataclass
import logging
from math import acos, pi, sqrt

import numpy as np
from scipy import linalg, stats

from calpha_het.errors import DomainError, SingularityError
from calpha_het.numerics import (
    as_sym_matrix,
    binomial_mixture,
    check_positive_definite,
    cholesky2,
    mixture_quantile,
    mixture_sf,
    solve_spd
)
from calpha_het.schemas import STANDARD_NORMAL, ChiBarMixture, TestReport

DIAGONAL_RTOL = 1e-8

logger = logging.getLogger(__name__)


def _as_columns(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a vector or an n x m matrix")
    return a


@dataclass(frozen=True)
class ScoreDecomposition:
    """Per-observation scores and information blocks of one model.

    Attributes:
        xi_scores: (n, q) second-order scores of the tested parameters.
        theta_scores: (n, p) first-order nuisance scores; p may be 0.
        J_xx: (q, q) information of the tested parameters.
        J_xt: (q, p) cross information.
        J_tt: (p, p) nuisance information.
    """
    xi_scores: np.ndarray
    theta_scores: np.ndarray
    J_xx: np.ndarray
    J_xt: np.ndarray
    J_tt: np.ndarray

    def __post_init__(self) -> None:
        xi = _as_columns(self.xi_scores, "xi_scores")
        n, q = xi.shape
        theta = np.asarray(self.theta_scores, dtype=float)
        if theta.size == 0:
            theta = np.zeros((n, 0))
        theta = _as_columns(theta, "theta_scores")
        p = theta.shape[1]
        if theta.shape[0] != n:
            raise ValueError(
                f"score matrices disagree on n: {n} vs {theta.shape[0]}"
            )
        J_xx = as_sym_matrix(self.J_xx, "J_xx")
        J_tt = (
            as_sym_matrix(self.J_tt, "J_tt") if p else np.zeros((0, 0))
        )
        J_xt = np.asarray(self.J_xt, dtype=float).reshape(q, p)
        if J_xx.shape != (q, q) or J_tt.shape != (p, p):
            raise ValueError(
                f"information blocks do not match q={q}, p={p}"
            )
        for name, value in (
            ("xi_scores", xi),
            ("theta_scores", theta),
            ("J_xx", J_xx),
            ("J_xt", J_xt),
            ("J_tt", J_tt)
        ):
            object.__setattr__(self, name, value)

    @classmethod
    def empirical(cls, xi_scores, theta_scores) -> "ScoreDecomposition":
        """Build the decomposition with outer-product information blocks.

        Args:
            xi_scores: (n, q) second-order scores.
            theta_scores: (n, p) nuisance scores.
        Returns:
            A decomposition whose J is the average outer product of the
            stacked score rows.
        """
        xi = _as_columns(xi_scores, "xi_scores")
        theta = np.asarray(theta_scores, dtype=float)
        theta = (
            np.zeros((xi.shape[0], 0)) if theta.size == 0
            else _as_columns(theta, "theta_scores")
        )
        n, q, p = xi.shape[0], xi.shape[1], theta.shape[1]
        if n < q + p:
            raise ValueError(f"need n >= q + p, got n={n}, q={q}, p={p}")
        stacked = np.hstack([xi, theta])
        J = stacked.T @ stacked / stacked.shape[0]
        return cls(xi, theta, J[:q, :q], J[:q, q:], J[q:, q:])

    @property
    def n(self) -> int:
        return self.xi_scores.shape[0]

    @property
    def q(self) -> int:
        return self.xi_scores.shape[1]

    @property
    def p(self) -> int:
        return self.theta_scores.shape[1]


def projection_coefficients(sd: ScoreDecomposition) -> np.ndarray:
    """Return A = J_xt J_tt^-1, the (q, p) regression of xi on theta scores.

    Raises:
        SingularityError: If J_tt is singular.
    """
    if sd.p == 0:
        return np.zeros((sd.q, 0))
    return solve_spd(sd.J_tt, sd.J_xt.T, "J_tt").T


def residual_score(sd: ScoreDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """Project the second-order scores off the nuisance scores.

    Args:
        sd: The score decomposition.
    Returns:
        A tuple (g, Sigma) of the (n, q) residual scores and the (q, q)
        residual information J_xx - J_xt J_tt^-1 J_tx.
    Raises:
        SingularityError: If J_tt or Sigma is not positive definite.
    """
    A = projection_coefficients(sd)
    g = sd.xi_scores - sd.theta_scores @ A.T
    Sigma = sd.J_xx - A @ sd.J_xt.T
    Sigma = (Sigma + Sigma.T) / 2.0
    check_positive_definite(Sigma, "residual information")
    return g, Sigma


def _normalized_sum(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=0) / sqrt(g.shape[0])


def z_statistic(sd: ScoreDecomposition) -> float:
    """Standardized residual score for a single tested parameter.

    Args:
        sd: Decomposition with q = 1.
    Returns:
        Z_n = Sigma^(-1/2) n^(-1/2) sum_i g_i.
    Raises:
        ValueError: If q != 1.
        SingularityError: If the residual information is not positive.
    """
    if sd.q != 1:
        raise ValueError(f"z_statistic needs q = 1, got q = {sd.q}")
    g, Sigma = residual_score(sd)
    return float(_normalized_sum(g)[0] / sqrt(Sigma[0, 0]))


def _check_level(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 0.5), got {alpha!r}")


def one_sided_decision(Z: float, alpha: float) -> dict:
    """Decide a one-sided scalar test.

    Rejection of (0 v Z)^2 above the 1/2 chi2(0) + 1/2 chi2(1) quantile is
    the same event as Z above the normal quantile, so the critical value
    is reported on the Z scale.

    Args:
        Z: The standardized statistic.
        alpha: Level in (0, 0.5).
    Returns:
        A dict with the decision fields of a TestReport.
    """
    _check_level(alpha)
    critical = float(stats.norm.isf(alpha))
    return {
        "statistic": float(Z),
        "null_distribution": STANDARD_NORMAL,
        "critical_value": critical,
        "p_value": float(stats.norm.sf(Z)),
        "alpha": alpha,
        "reject": bool(Z > critical)
    }


def scalar_report(
        sd: ScoreDecomposition,
        alpha: float,
        test: str,
        nuisance_estimates: dict[str, float] | None = None,
        warnings: list[str] | None = None
) -> TestReport:
    """Run the scalar pipeline from scores to a finished report."""
    Z = z_statistic(sd)
    report = TestReport(
        test=test,
        n=sd.n,
        nuisance_estimates=nuisance_estimates or {},
        warnings=warnings or [],
        **one_sided_decision(Z, alpha)
    )
    logger.info(f"{test}: Z={Z:.6g}, reject={report.reject}")
    return report


def _check_rho(rho: float) -> None:
    if not -1.0 < rho < 1.0:
        raise SingularityError(
            f"correlation must lie in (-1, 1), got {rho!r}"
        )


def bivariate_T(w, rho: float) -> tuple[float, int]:
    """Squared norm of the projection of w onto the feasible cone.

    The cone is generated by (1, 0) and u = (rho, sqrt(1 - rho^2)).
    Cases: 1 interior, 2 projection on the first generator, 3 projection
    on u, 4 projection on the apex.

    Args:
        w: Whitened residual score 2-vector.
        rho: Correlation of the two residual scores.
    Returns:
        A tuple (T, case).
    Raises:
        SingularityError: If |rho| >= 1.
    """
    _check_rho(rho)
    w1, w2 = (float(v) for v in np.asarray(w, dtype=float).reshape(2))
    s = sqrt(1.0 - rho * rho)
    if w2 >= 0.0 and w1 * s - rho * w2 >= 0.0:
        return w1 * w1 + w2 * w2, 1
    if w1 >= 0.0 and w2 <= 0.0:
        return w1 * w1, 2
    uw = rho * w1 + s * w2
    if uw >= 0.0 and rho * w2 - s * w1 >= 0.0:
        return uw * uw, 3
    return 0.0, 4


def bivariate_weights(rho: float) -> ChiBarMixture:
    """Null mixture of the bivariate cone statistic.

    Args:
        rho: Correlation in (-1, 1).
    Returns:
        Weights (1/2 - b/2pi, 1/2, b/2pi) on chi2(0..2), b = arccos(rho).
    Raises:
        SingularityError: If |rho| >= 1.
    """
    _check_rho(rho)
    b = acos(rho) / (2.0 * pi)
    return ChiBarMixture(weights=(0.5 - b, 0.5, b), dfs=(0, 1, 2))


def _mixture_fields(T: float, m: ChiBarMixture, alpha: float) -> dict:
    _check_level(alpha)
    critical = mixture_quantile(m, 1.0 - alpha)
    return {
        "statistic": T,
        "null_distribution": m,
        "critical_value": critical,
        "p_value": mixture_sf(m, T),
        "alpha": alpha,
        "reject": bool(T > critical)
    }


def bivariate_statistic(
        sd: ScoreDecomposition,
        alpha: float,
        test: str = "bivariate",
        nuisance_estimates: dict[str, float] | None = None
) -> TestReport:
    """Joint one-sided test of two heterogeneity parameters.

    Args:
        sd: Decomposition with q = 2.
        alpha: Level in (0, 0.5).
        test: Label stored in the report.
        nuisance_estimates: Fitted nuisance values to echo.
    Returns:
        Report with the whitened scores w as components.
    Raises:
        ValueError: If q != 2.
        SingularityError: If Sigma is singular or |rho| = 1.
    """
    if sd.q != 2:
        raise ValueError(f"bivariate_statistic needs q = 2, got {sd.q}")
    g, Sigma = residual_score(sd)
    L = cholesky2(Sigma)
    w = linalg.solve_triangular(L, _normalized_sum(g), lower=True)
    rho = Sigma[0, 1] / sqrt(Sigma[0, 0] * Sigma[1, 1])
    T, case = bivariate_T(w, rho)
    logger.debug(f"Bivariate cone case {case} at rho={rho:.4f}")
    return TestReport(
        test=test,
        components=[float(v) for v in w],
        n=sd.n,
        nuisance_estimates=nuisance_estimates or {},
        **_mixture_fields(T, bivariate_weights(rho), alpha)
    )


def diag_T(residual_scores, Sigma_diag) -> float:
    """One-sided statistic for a diagonal residual information.

    Args:
        residual_scores: q-vector of normalized residual scores.
        Sigma_diag: q positive variances.
    Returns:
        (0 v S)' Sigma^-1 (0 v S).
    Raises:
        SingularityError: If a variance is not positive.
    """
    S = np.atleast_1d(np.asarray(residual_scores, dtype=float))
    v = np.atleast_1d(np.asarray(Sigma_diag, dtype=float))
    if S.shape != v.shape:
        raise ValueError("residual scores and variances differ in length")
    if np.any(v <= 0.0):
        raise SingularityError("diagonal residual information must be > 0")
    positive = np.maximum(S, 0.0)
    return float(np.sum(positive * positive / v))


def diagonal_statistic(
        sd: ScoreDecomposition,
        alpha: float,
        test: str = "diagonal",
        nuisance_estimates: dict[str, float] | None = None
) -> TestReport:
    """Joint one-sided test when the residual information is diagonal.

    The components are the standardized residual scores t_k.

    Raises:
        ValueError: If Sigma has off-diagonal mass above 1e-8 x scale.
        SingularityError: If Sigma is not positive definite.
    """
    g, Sigma = residual_score(sd)
    diag = np.diag(Sigma)
    off = Sigma - np.diag(diag)
    if np.max(np.abs(off), initial=0.0) > DIAGONAL_RTOL * np.max(diag):
        logger.warning("Residual information has off-diagonal mass")
        raise ValueError("residual information is not diagonal")
    S = _normalized_sum(g)
    T = diag_T(S, diag)
    return TestReport(
        test=test,
        components=[float(v) for v in S / np.sqrt(diag)],
        n=sd.n,
        nuisance_estimates=nuisance_estimates or {},
        **_mixture_fields(T, binomial_mixture(sd.q), alpha)
    )


def chisq_score_statistic(g_n, I_resid) -> tuple[float, float]:
    """Quadratic form g' I^-1 g with its chi2(q) p-value.

    Args:
        g_n: Normalized residual score q-vector.
        I_resid: (q, q) residual information.
    Returns:
        A tuple (T, p_value).
    Raises:
        SingularityError: If I_resid is singular.
    """
    g_n = np.atleast_1d(np.asarray(g_n, dtype=float))
    T = float(g_n @ solve_spd(I_resid, g_n, "residual information"))
    return T, float(stats.chi2.sf(T, g_n.shape[0]))


def regular_calpha(
        first_order_xi_scores,
        theta_scores,
        I_xx=None,
        I_xt=None,
        I_tt=None
) -> tuple[float, float]:
    """Classical C(alpha) test built on first-order scores.

    Information blocks default to the empirical outer product when not
    given.

    Args:
        first_order_xi_scores: (n, q) scores of the tested parameters.
        theta_scores: (n, p) nuisance scores.
        I_xx: Optional (q, q) per-observation information.
        I_xt: Optional (q, p) cross information.
        I_tt: Optional (p, p) nuisance information.
    Returns:
        A tuple (T, p_value) with T asymptotically chi2(q).
    Raises:
        SingularityError: If I_tt or the residual information is singular.
    """
    if I_xx is None:
        sd = ScoreDecomposition.empirical(first_order_xi_scores, theta_scores)
    else:
        sd = ScoreDecomposition(
            first_order_xi_scores, theta_scores, I_xx, I_xt, I_tt
        )
    g, I_resid = residual_score(sd)
    return chisq_score_statistic(_normalized_sum(g), I_resid)
