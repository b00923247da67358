# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Restricted maximum likelihood

Newton-Raphson with analytic Hessians and step-halving for the null
models of every test, plus closed forms where they exist.
"""
import logging
from math import log, pi
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, special

from calpha_het.config import MAX_HALVINGS, MAX_NEWTON_ITER
from calpha_het.data import (
    CountData,
    DurationData,
    PanelData,
    RegressionData
)
from calpha_het.errors import ConvergenceError, DataError
from calpha_het.schemas import FitResult

POLISH_STEPS = 2
STEP_RTOL = 1e-14
LOGLIK_RTOL = 1e-12
STEP_CHECK = 1e-6
SHAPE_BOUNDS = (1e-3, 1e3)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]

logger = logging.getLogger(__name__)


class _NewtonState(NamedTuple):
    x: np.ndarray
    loglik: float
    gradient_norm: float
    step_norm: float
    iterations: int
    trace: list[float]


def _always_valid(x: np.ndarray) -> bool:
    return True


def _ascent_direction(
        hess: np.ndarray,
        grad: np.ndarray,
        model: str
) -> np.ndarray:
    """Newton direction, or scaled gradient where the Hessian is not
    negative definite."""
    try:
        direction = -np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError as linalg_error:
        logger.warning(f"{model}: singular Hessian", exc_info=True)
        raise ConvergenceError(
            f"{model}: singular Hessian"
        ) from linalg_error
    if grad @ direction <= 0.0:
        scale = max(float(np.max(np.abs(np.diag(hess)))), 1.0)
        direction = grad / scale
    return direction


def _halving_search(
        objective: Objective,
        x: np.ndarray,
        proposal: np.ndarray,
        loglik: float,
        gradient_norm: float,
        valid: Callable[[np.ndarray], bool]
) -> tuple | None:
    """Halve the step from x towards proposal until the loglik ascends.

    A candidate whose loglik ties within rounding is accepted only when it
    shrinks the gradient.

    Returns:
        (x, loglik, grad, hess) of the accepted point, or None.
    """
    for halving in range(MAX_HALVINGS + 1):
        step_size = 0.5 ** halving
        candidate = x + step_size * (proposal - x)
        if not valid(candidate):
            continue
        cand_ll, cand_grad, cand_hess = objective(candidate)
        if not np.isfinite(cand_ll) or not np.all(np.isfinite(cand_grad)):
            continue
        slack = LOGLIK_RTOL * (1.0 + abs(loglik))
        if cand_ll > loglik or (
                cand_ll >= loglik - slack
                and np.linalg.norm(cand_grad) < gradient_norm
        ):
            return candidate, cand_ll, cand_grad, cand_hess
    return None


def _newton(
        objective: Objective,
        x0,
        tol: float,
        model: str,
        valid: Callable[[np.ndarray], bool] = _always_valid
) -> _NewtonState:
    """Maximize a concave log-likelihood by damped Newton steps.

    Iteration stops once the gradient norm is below `tol` and a couple of
    polishing steps have been taken, or when no ascent step exists.
    """
    x = np.asarray(x0, dtype=float)
    loglik, grad, hess = objective(x)
    trace = [loglik]
    iterations = 0
    polish = POLISH_STEPS
    while iterations < MAX_NEWTON_ITER:
        gradient_norm = float(np.linalg.norm(grad))
        if gradient_norm < tol:
            if polish == 0:
                break
            polish -= 1
        direction = _ascent_direction(hess, grad, model)
        if np.linalg.norm(direction) <= STEP_RTOL * (1.0 + np.linalg.norm(x)):
            break
        accepted = _halving_search(
            objective, x, x + direction, loglik, gradient_norm, valid
        )
        if accepted is None:
            logger.debug(f"{model}: no ascent step at iteration {iterations}")
            break
        x, loglik, grad, hess = accepted
        iterations += 1
        trace.append(loglik)
        logger.debug(
            f"{model} iteration {iterations}: loglik={loglik:.12g}, "
            f"|grad|={np.linalg.norm(grad):.3e}"
        )
    step_norm = float(np.linalg.norm(_ascent_direction(hess, grad, model)))
    return _NewtonState(
        x,
        loglik,
        float(np.linalg.norm(grad)),
        step_norm / (1.0 + float(np.linalg.norm(x))),
        iterations,
        trace
    )


def _finish(
        state: _NewtonState,
        model: str,
        estimates: dict[str, float],
        tol: float
) -> FitResult:
    """Wrap a solver state, raising if it missed the tolerance."""
    converged = state.gradient_norm < tol and state.step_norm < STEP_CHECK
    fit = FitResult(
        model=model,
        estimates=estimates,
        iterations=state.iterations,
        gradient_norm=state.gradient_norm,
        tolerance=tol,
        converged=converged,
        loglik=state.loglik,
        trace=state.trace
    )
    if not converged:
        logger.warning(
            f"{model} fit stopped after {state.iterations} iterations "
            f"with gradient norm {state.gradient_norm:.3e}"
        )
        raise ConvergenceError(
            f"{model} fit did not converge "
            f"(gradient norm {state.gradient_norm:.3e} >= {tol:.3e})",
            fit=fit
        )
    logger.info(f"{model} fit converged in {state.iterations} iterations")
    return fit


def _beta_names(beta: np.ndarray) -> dict[str, float]:
    return {f"beta{j}": float(b) for j, b in enumerate(beta)}


def fit_poisson(d: CountData) -> FitResult:
    """Poisson regression with log link.

    Args:
        d: Count data.
    Returns:
        The converged fit with estimates beta0..betak.
    Raises:
        DataError: If all counts are zero.
        ConvergenceError: If the coefficients diverge.
    """
    if not np.any(d.y > 0):
        raise DataError("Poisson fit needs at least one positive count")
    log_factorial = float(np.sum(special.gammaln(d.y + 1.0)))

    def objective(beta):
        eta = d.X @ beta
        lam = np.exp(eta)
        loglik = float(d.y @ eta - lam.sum()) - log_factorial
        grad = d.X.T @ (d.y - lam)
        hess = -(d.X * lam[:, None]).T @ d.X
        return loglik, grad, hess

    x0 = np.zeros(d.X.shape[1])
    x0[0] = log(float(np.mean(d.y)))
    tol = 1e-10 * (1.0 + float(np.sum(d.y)))
    state = _newton(objective, x0, tol, "poisson")
    return _finish(state, "poisson", _beta_names(state.x), tol)


def _exponential_objective(t: np.ndarray, X: np.ndarray) -> Objective:
    def objective(beta):
        eta = X @ beta
        q = t * np.exp(eta)
        loglik = float(np.sum(eta - q))
        grad = X.T @ (1.0 - q)
        hess = -(X * q[:, None]).T @ X
        return loglik, grad, hess
    return objective


def fit_exponential_ph(d: DurationData) -> FitResult:
    """Exponential proportional hazards, hazard exp(x'beta).

    Raises:
        ConvergenceError: If the score equations are not solved.
    """
    x0 = np.zeros(d.X.shape[1])
    x0[0] = log(d.n / float(np.sum(d.t)))
    tol = 1e-10 * (1.0 + d.n)
    objective = _exponential_objective(d.t, d.X)
    state = _newton(objective, x0, tol, "exponential_ph")
    return _finish(state, "exponential_ph", _beta_names(state.x), tol)


def _weibull_objective(d: DurationData) -> Objective:
    log_t = np.log(d.t)
    p = d.X.shape[1]

    def objective(params):
        beta, alpha = params[:p], params[p]
        eta = d.X @ beta
        q = np.exp(alpha * log_t + eta)
        loglik = float(np.sum(log(alpha) + (alpha - 1.0) * log_t + eta - q))
        grad = np.concatenate([
            d.X.T @ (1.0 - q),
            [np.sum(1.0 / alpha + log_t * (1.0 - q))]
        ])
        hess = np.empty((p + 1, p + 1))
        hess[:p, :p] = -(d.X * q[:, None]).T @ d.X
        hess[:p, p] = hess[p, :p] = -d.X.T @ (q * log_t)
        hess[p, p] = -np.sum(1.0 / alpha ** 2 + q * log_t ** 2)
        return loglik, grad, hess
    return objective


def profile_weibull_shape(d: DurationData) -> tuple[float, np.ndarray]:
    """Maximize the Weibull profile log-likelihood over the shape.

    At fixed alpha, beta_hat(alpha) is the exponential fit to t^alpha.
    The profile is searched on log alpha with bounded Brent.

    Args:
        d: Duration data.
    Returns:
        A tuple (alpha, beta_hat(alpha)).
    """
    # durations are rescaled by their geometric mean; the intercept absorbs it
    log_t = np.log(d.t)
    log_g = float(np.mean(log_t))
    centred = log_t - log_g

    def inner_fit(alpha: float) -> FitResult:
        return fit_exponential_ph(DurationData(np.exp(alpha * centred), d.X))

    def negative_profile(log_alpha: float) -> float:
        alpha = float(np.exp(log_alpha))
        try:
            inner = inner_fit(alpha)
        except (ConvergenceError, DataError):
            return float("inf")
        return -(inner.loglik + d.n * log_alpha
                 + (alpha - 1.0) * float(np.sum(centred)))

    result = optimize.minimize_scalar(
        negative_profile,
        bounds=(log(SHAPE_BOUNDS[0]), log(SHAPE_BOUNDS[1])),
        method="bounded",
        options={"xatol": 1e-10}
    )
    alpha = float(np.exp(result.x))
    beta = inner_fit(alpha).beta
    beta[0] -= alpha * log_g
    logger.info(f"Weibull profile search found shape {alpha:.6g}")
    return alpha, beta


def fit_weibull_ph(d: DurationData) -> FitResult:
    """Weibull proportional hazards, hazard alpha t^(alpha-1) exp(x'beta).

    Newton starts from the exponential fit (alpha = 1). If it cannot
    reach the tolerance, the profile search supplies a new start.

    Args:
        d: Duration data.
    Returns:
        Fit with estimates beta0..betak and alpha.
    Raises:
        DataError: If all durations are equal.
        ConvergenceError: If the shape diverges.
    """
    if np.all(d.t == d.t[0]):
        raise DataError("Weibull shape is unidentified for equal durations")
    objective = _weibull_objective(d)
    p = d.X.shape[1]
    tol = 1e-9 * (1.0 + d.n)

    def valid(params):
        return params[p] > 0.0

    start = np.append(fit_exponential_ph(d).beta, 1.0)
    state = _newton(objective, start, tol, "weibull_ph", valid)
    if not (state.gradient_norm < tol and state.step_norm < STEP_CHECK):
        logger.warning("Weibull Newton stalled; falling back to profile")
        try:
            alpha, beta = profile_weibull_shape(d)
        except ConvergenceError as inner_error:
            raise ConvergenceError(
                "Weibull profile search failed"
            ) from inner_error
        state = _newton(objective, np.append(beta, alpha), tol,
                        "weibull_ph", valid)
    estimates = {**_beta_names(state.x[:p]), "alpha": float(state.x[p])}
    return _finish(state, "weibull_ph", estimates, tol)


def fit_gaussian_panel(d: PanelData) -> FitResult:
    """Closed-form MLE of N(mu, sigma2) over a balanced panel.

    The gradient norm is reported in the (mu/sigma, log sigma2)
    parameterization so it is scale free.

    Raises:
        DataError: If the panel has zero variance.
    """
    NT = d.Y.size
    mu = float(np.mean(d.Y))
    sigma2 = float(np.mean((d.Y - mu) ** 2))
    if not sigma2 > 0.0:
        logger.warning("Panel has zero variance")
        raise DataError("panel has zero variance")
    z = (d.Y - mu) / np.sqrt(sigma2)
    gradient_norm = float(np.hypot(np.sum(z), 0.5 * (np.sum(z * z) - NT)))
    loglik = -0.5 * NT * (log(2.0 * pi * sigma2) + 1.0)
    return FitResult(
        model="gaussian_panel",
        estimates={"mu": mu, "sigma2": sigma2},
        iterations=0,
        gradient_norm=gradient_norm,
        tolerance=1e-8 * (1.0 + NT),
        converged=True,
        loglik=loglik,
        trace=[loglik]
    )


def fit_gaussian_regression(d: RegressionData) -> FitResult:
    """Least squares, the MLE of the unit-variance normal regression."""
    beta, *_ = np.linalg.lstsq(d.X, d.y, rcond=None)
    e = d.y - d.X @ beta
    gradient_norm = float(np.linalg.norm(d.X.T @ e))
    loglik = float(-0.5 * (e @ e) - 0.5 * d.n * log(2.0 * pi))
    return FitResult(
        model="gaussian_regression",
        estimates=_beta_names(beta),
        iterations=0,
        gradient_norm=gradient_norm,
        tolerance=1e-8 * (1.0 + float(np.sum(np.abs(d.X).T @ np.abs(d.y)))),
        converged=True,
        loglik=loglik,
        trace=[loglik]
    )
