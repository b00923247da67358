# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Numerical kernel

Special functions, chi-squared and chi-bar-squared mixture distributions,
and the small dense linear algebra shared by every other module.
"""
import logging
from math import comb, isfinite

import numpy as np
from scipy import optimize, special, stats

from calpha_het.config import PD_RTOL, SINGULARITY_RTOL, SYMMETRY_ATOL
from calpha_het.errors import DomainError, SingularityError
from calpha_het.schemas import ChiBarMixture

QUANTILE_XTOL = 1e-12

logger = logging.getLogger(__name__)


def digamma(x: float) -> float:
    """Digamma function psi(x) for x > 0.

    Args:
        x: A positive real.
    Returns:
        psi(x).
    Raises:
        DomainError: If `x` is not a finite positive real.
    """
    _check_positive(x, "digamma")
    return float(special.psi(x))


def trigamma(x: float) -> float:
    """Trigamma function psi'(x) for x > 0.

    Args:
        x: A positive real.
    Returns:
        psi'(x).
    Raises:
        DomainError: If `x` is not a finite positive real.
    """
    _check_positive(x, "trigamma")
    return float(special.polygamma(1, x))


def _check_positive(x: float, name: str) -> None:
    if not isfinite(x) or x <= 0:
        raise DomainError(f"{name} requires a positive argument, got {x!r}")


def chisq_cdf(x: float, df: int) -> float:
    """CDF of chi2(df); chi2(0) is the point mass at zero."""
    if x < 0:
        return 0.0
    if df == 0:
        return 1.0
    return float(stats.chi2.cdf(x, df))


def chisq_quantile(p: float, df: int) -> float:
    """Quantile of the central chi-squared law.

    Args:
        p: Probability in (0, 1).
        df: Positive degrees of freedom.
    Returns:
        The p-quantile of chi2(df).
    Raises:
        DomainError: If `p` is outside (0, 1) or `df` is not positive.
    """
    _check_probability(p)
    if df < 1:
        raise DomainError(f"df must be a positive integer, got {df!r}")
    return float(stats.chi2.ppf(p, df))


def _check_probability(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")


def half_mixture() -> ChiBarMixture:
    """The one-sided scalar null law 1/2 chi2(0) + 1/2 chi2(1)."""
    return ChiBarMixture(weights=(0.5, 0.5), dfs=(0, 1))


def binomial_mixture(q: int) -> ChiBarMixture:
    """Null law sum_i C(q, i) 2^-q chi2(i) of a diagonal q-dim cone test."""
    if q < 1:
        raise DomainError(f"dimension must be positive, got {q!r}")
    weights = tuple(comb(q, i) / 2.0 ** q for i in range(q + 1))
    return ChiBarMixture(weights=weights, dfs=tuple(range(q + 1)))


def mixture_cdf(m: ChiBarMixture, x: float) -> float:
    """CDF of a chi-bar-squared mixture.

    Args:
        m: The mixture.
        x: A nonnegative real.
    Returns:
        sum_k weight_k * F_chi2(df_k)(x).
    Raises:
        DomainError: If `x` is negative.
    """
    if x < 0:
        raise DomainError(f"mixture_cdf requires x >= 0, got {x!r}")
    return min(1.0, sum(w * chisq_cdf(x, df) for w, df in m.components))


def mixture_sf(m: ChiBarMixture, x: float) -> float:
    """Upper tail P(T >= x) of a mixture; equals 1 at x = 0."""
    if x <= 0:
        return 1.0
    return max(0.0, 1.0 - mixture_cdf(m, x))


def mixture_quantile(m: ChiBarMixture, p: float) -> float:
    """Smallest x with mixture_cdf(m, x) >= p.

    Args:
        m: The mixture.
        p: Probability in (0, 1).
    Returns:
        The p-quantile; zero when `p` does not exceed the mass at zero.
    Raises:
        DomainError: If `p` is outside (0, 1).
    """
    _check_probability(p)
    if p <= m.mass_at_zero:
        return 0.0
    # chi2 of the largest df is stochastically largest, so its quantile
    # brackets the mixture quantile from above
    upper = float(stats.chi2.ppf(p, max(m.dfs)))
    return float(optimize.brentq(
        lambda x: mixture_cdf(m, x) - p,
        0.0,
        upper,
        xtol=QUANTILE_XTOL,
        rtol=4 * np.finfo(float).eps
    ))


def as_sym_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a symmetric float matrix.

    Args:
        a: Array-like square matrix.
        name: Label used in error messages.
    Returns:
        The matrix as a float ndarray, symmetrized.
    Raises:
        ValueError: If `a` is not square or not symmetric within tolerance.
    """
    s = np.atleast_2d(np.asarray(a, dtype=float))
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"{name} must be square, got shape {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s)))) if s.size else 1.0
    if not np.allclose(s, s.T, rtol=0.0, atol=SYMMETRY_ATOL * scale):
        raise ValueError(f"{name} is not symmetric")
    return (s + s.T) / 2.0


def check_positive_definite(s: np.ndarray, name: str) -> None:
    """Raise if the smallest eigenvalue is below 1e-10 x trace.

    Raises:
        SingularityError: If `s` is numerically singular or indefinite.
    """
    if s.size == 0:
        return
    eigenvalues = np.linalg.eigvalsh(s)
    threshold = SINGULARITY_RTOL * max(float(np.trace(s)), 0.0)
    if eigenvalues[0] <= threshold:
        logger.warning(
            f"{name} is singular: smallest eigenvalue {eigenvalues[0]:.3e}"
        )
        raise SingularityError(
            f"{name} is not positive definite "
            f"(smallest eigenvalue {eigenvalues[0]:.3e})"
        )


def solve_spd(a, b, name: str = "matrix") -> np.ndarray:
    """Solve a x = b for a symmetric positive definite `a`.

    Args:
        a: Symmetric positive definite matrix.
        b: Right-hand side vector or matrix.
        name: Label used in error messages.
    Returns:
        The solution x.
    Raises:
        SingularityError: If `a` fails the singularity threshold.
    """
    s = as_sym_matrix(a, name)
    check_positive_definite(s, name)
    return np.linalg.solve(s, np.asarray(b, dtype=float))


def cholesky2(s) -> np.ndarray:
    """Lower Cholesky factor of a 2x2 covariance matrix.

    The factor is (sqrt v1, 0; rho sqrt v2, sqrt v2 sqrt(1 - rho^2)).

    Args:
        s: Symmetric 2x2 matrix.
    Returns:
        The lower-triangular factor L with L L^T = s.
    Raises:
        ValueError: If `s` is not a symmetric 2x2 matrix.
        SingularityError: If `s` is not positive definite, which includes
        |rho| = 1.
    """
    s = as_sym_matrix(s, "covariance")
    if s.shape != (2, 2):
        raise ValueError(f"cholesky2 needs a 2x2 matrix, got {s.shape}")
    v1, s12, v2 = s[0, 0], s[0, 1], s[1, 1]
    scale = max(abs(v1), abs(v2), 1e-300)
    det = v1 * v2 - s12 * s12
    if v1 <= PD_RTOL * scale or det <= PD_RTOL * scale * scale:
        logger.warning(f"Degenerate 2x2 covariance: v1={v1}, det={det}")
        raise SingularityError(
            "second-order scores are perfectly linearly related"
        )
    rho = s12 / np.sqrt(v1 * v2)
    return np.array([
        [np.sqrt(v1), 0.0],
        [rho * np.sqrt(v2), np.sqrt(v2) * np.sqrt(1.0 - rho * rho)]
    ])
