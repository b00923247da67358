# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Seeded Monte Carlo laboratory

Data generators under the null and under n^(-1/4) local alternatives,
size and power experiments, diagnostics of the quadratic likelihood
expansion and of nuisance plug-in, and analytic local power.

Every replication draws from its own Philox generator keyed by
(master_seed, replication, stream), so results do not depend on the
number of worker threads.
"""
from concurrent.futures import ThreadPoolExecutor
import logging
from math import log, sqrt
from typing import NamedTuple

import numpy as np
from scipy import stats

from calpha_het.config import SIM_THREAD_CAP, SIM_THREADS
from calpha_het.core import (
    ScoreDecomposition,
    residual_score,
    z_statistic
)
from calpha_het.data import (
    CountData,
    DurationData,
    PanelData,
    with_intercept
)
from calpha_het.errors import (
    ConvergenceError,
    DataError,
    DomainError,
    SingularityError
)
from calpha_het.models import (
    exponential_decomposition,
    panel_decomposition,
    poisson_decomposition,
    poisson_k_decomposition,
    run_test,
    weibull_decomposition
)
from calpha_het.numerics import binomial_mixture
from calpha_het.schemas import (
    STANDARD_NORMAL,
    GeneratorSpec,
    HeterogeneityForm,
    LANSummary,
    PluginSummary,
    SimulationReport,
    TestId,
    UDist,
    WeibullVariance
)

STREAM_COVARIATES = 0
STREAM_HETEROGENEITY = 1
STREAM_OUTCOME = 2
MIN_REPS = 100
MAX_RESAMPLE_ROUNDS = 1000
PER_REP_SEED_RULE = (
    "Philox(SeedSequence([master_seed, rep, stream])); "
    "streams 0 covariates, 1 heterogeneity, 2 outcomes"
)

TEST_MODELS = {
    "poisson-secmom": ("poisson",),
    "poisson-secfac": ("poisson",),
    "cox-exp": ("exponential_ph", "weibull_ph"),
    "cox-weibull": ("weibull_ph", "exponential_ph"),
    "gaussian-panel": ("gaussian_panel",)
}
# heterogeneity form each scalar test is locally optimal against
MATCHED_FORM = {
    "poisson-secmom": "multiplicative_exp",
    "poisson-secfac": "sqrt_scaled",
    "cox-exp": "multiplicative_exp",
    "cox-weibull": "multiplicative_exp"
}
FIT_FAILURES = (ConvergenceError, DataError, SingularityError)

logger = logging.getLogger(__name__)


class Draw(NamedTuple):
    """One generated dataset and its count of resampled draws."""
    data: CountData | DurationData | PanelData
    resampled: int


def worker_count(threads: int | None = None) -> int:
    """Threads for an experiment, capped by CALPHA_THREADS when it is set."""
    requested = threads or SIM_THREADS
    if SIM_THREAD_CAP:
        requested = min(requested, SIM_THREAD_CAP)
    return max(1, requested)


def replication_rng(master_seed: int, rep: int, *stream: int):
    """Counter-based generator for one replication and stream.

    Args:
        master_seed: Nonnegative master seed.
        rep: Replication index.
        stream: One or more stream ids.
    Returns:
        A numpy Generator backed by Philox.
    """
    key = np.random.SeedSequence([master_seed, rep, *stream])
    return np.random.Generator(np.random.Philox(key))


def draw_u(rng, u_dist: UDist, size: int) -> np.ndarray:
    """Draw mean-zero, unit-variance heterogeneity variables.

    Raises:
        ValueError: If `u_dist` is unknown.
    """
    if u_dist == "gaussian":
        return rng.standard_normal(size)
    if u_dist == "rademacher":
        return 2.0 * rng.integers(0, 2, size) - 1.0
    if u_dist == "centered_exponential":
        return rng.exponential(1.0, size) - 1.0
    raise ValueError(f"Unknown heterogeneity distribution {u_dist!r}")


def heterogeneous_rates(
        lambda0,
        xi: float,
        u,
        form: HeterogeneityForm
) -> np.ndarray:
    """Map base rates to individual rates.

    Args:
        lambda0: Positive base rates.
        xi: Heterogeneity magnitude.
        u: Heterogeneity variables.
        form: "multiplicative_exp" (lambda0 exp(xi u)), "additive"
            (lambda0 + xi u) or "sqrt_scaled"
            (lambda0 (1 + xi u / sqrt(lambda0))).
    Returns:
        The individual rates; additive forms may be nonpositive.
    """
    lambda0 = np.asarray(lambda0, dtype=float)
    u = np.asarray(u, dtype=float)
    if form == "multiplicative_exp":
        return lambda0 * np.exp(xi * u)
    if form == "additive":
        return lambda0 + xi * u
    if form == "sqrt_scaled":
        return lambda0 * (1.0 + xi * u / np.sqrt(lambda0))
    raise ValueError(f"Unknown heterogeneity form {form!r}")


def _positive_rates(
        rng,
        base: np.ndarray,
        xi: float,
        spec: GeneratorSpec
) -> tuple[np.ndarray, int]:
    """Draw rates, redrawing U wherever a rate is not positive."""
    u = draw_u(rng, spec.u_dist, base.shape[0])
    rates = heterogeneous_rates(base, xi, u, spec.form)
    resampled = 0
    for _ in range(MAX_RESAMPLE_ROUNDS):
        bad = rates <= 0.0
        if not np.any(bad):
            return rates, resampled
        count = int(np.sum(bad))
        resampled += count
        u[bad] = draw_u(rng, spec.u_dist, count)
        rates[bad] = heterogeneous_rates(base[bad], xi, u[bad], spec.form)
    if np.all(rates > 0.0):
        return rates, resampled
    raise DataError(
        f"{spec.form} rates stayed nonpositive after "
        f"{MAX_RESAMPLE_ROUNDS} resampling rounds"
    )


def _design(spec: GeneratorSpec, rng) -> np.ndarray:
    if spec.covariates == "bernoulli":
        return with_intercept(rng.integers(0, 2, spec.n).astype(float))
    if spec.covariates == "uniform":
        return with_intercept(rng.uniform(0.0, 1.0, spec.n))
    return np.ones((spec.n, 1))


def truth_beta(spec: GeneratorSpec) -> np.ndarray:
    """True regression coefficients of a regression generator."""
    truth = spec.full_truth()
    keys = sorted((k for k in truth if k.startswith("beta")),
                  key=lambda k: int(k[4:]))
    return np.array([truth[k] for k in keys])


def draw_replication(spec: GeneratorSpec, master_seed: int, rep: int) -> Draw:
    """Generate the dataset of one replication.

    Args:
        spec: The data-generating process.
        master_seed: Master seed.
        rep: Replication index.
    Returns:
        The dataset and the number of resampled heterogeneity draws.
    Raises:
        DataError: If the generated data are invalid for the model.
    """
    het_rng = replication_rng(master_seed, rep, STREAM_HETEROGENEITY)
    out_rng = replication_rng(master_seed, rep, STREAM_OUTCOME)
    xi, xi_scale = spec.magnitudes()
    truth = spec.full_truth()

    if spec.model == "gaussian_panel":
        u1 = draw_u(het_rng, spec.u_dist, spec.n)
        u2 = draw_u(het_rng, spec.u_dist, spec.n)
        mu = truth["mu"] + xi * u1
        sd = np.sqrt(truth["sigma2"]) * np.exp(0.5 * xi_scale * u2)
        eps = out_rng.standard_normal((spec.n, spec.T))
        return Draw(PanelData(mu[:, None] + sd[:, None] * eps), 0)

    X = _design(spec, replication_rng(master_seed, rep, STREAM_COVARIATES))
    base = np.exp(X @ truth_beta(spec))
    rates, resampled = _positive_rates(het_rng, base, xi, spec)
    if spec.model == "poisson":
        return Draw(CountData(out_rng.poisson(rates), X), resampled)
    shape = truth.get("alpha", 1.0) if spec.model == "weibull_ph" else 1.0
    t = (out_rng.exponential(1.0, spec.n) / rates) ** (1.0 / shape)
    return Draw(DurationData(t, X), resampled)


def generate(spec: GeneratorSpec, seed: int, rep: int = 0):
    """Generate one observation set; xi = 0 gives exact null data."""
    return draw_replication(spec, seed, rep).data


def decomposition_at(
        test: TestId,
        data,
        params: dict[str, float],
        variance: WeibullVariance = "classic"
) -> ScoreDecomposition:
    """Scores and information of a test's model at given parameters."""
    if test == "gaussian-panel":
        return panel_decomposition(data, params["mu"], params["sigma2"])
    keys = sorted((k for k in params if k.startswith("beta")),
                  key=lambda k: int(k[4:]))
    beta = np.array([params[k] for k in keys])
    if test == "poisson-secmom":
        return poisson_decomposition(data, beta)
    if test == "poisson-secfac":
        return poisson_k_decomposition(data, beta, "sqrt")
    if test == "cox-exp":
        return exponential_decomposition(data, beta)
    return weibull_decomposition(
        data, beta, params.get("alpha", 1.0), variance
    )


def power_prediction(delta1: float, J_resid: float, alpha: float) -> float:
    """Local power of the one-sided scalar test.

    Args:
        delta1: Local alternative scale, xi_n = delta1 n^(-1/4).
        J_resid: Residual information, > 0.
        alpha: Level.
    Returns:
        1 - Phi(z_(1-alpha) - delta1^2 sqrt(J_resid)).
    Raises:
        DomainError: If `J_resid` is not positive.
    """
    if not J_resid > 0:
        raise DomainError(f"J_resid must be positive, got {J_resid!r}")
    shift = delta1 * delta1 * sqrt(J_resid)
    return float(stats.norm.sf(stats.norm.isf(alpha) - shift))


def _mixture_ks(values: np.ndarray, weights, dfs) -> float:
    """Kolmogorov distance to a chi-bar-squared law with an atom at 0."""
    x = np.sort(values)
    F = np.zeros_like(x)
    F_left = np.zeros_like(x)
    for w, df in zip(weights, dfs):
        if df == 0:
            F += w * (x >= 0.0)
            F_left += w * (x > 0.0)
        else:
            cdf = stats.chi2.cdf(x, df)
            F += w * cdf
            F_left += w * cdf
    ecdf = np.searchsorted(x, x, side="right") / x.shape[0]
    ecdf_left = np.searchsorted(x, x, side="left") / x.shape[0]
    return float(max(np.max(np.abs(ecdf - F)),
                     np.max(np.abs(ecdf_left - F_left))))


def _check_pairing(spec: GeneratorSpec, test: TestId) -> None:
    if test not in TEST_MODELS:
        raise ValueError(f"Unknown test {test!r}")
    if spec.model not in TEST_MODELS[test]:
        raise ValueError(
            f"{test} cannot be run on {spec.model} data"
        )


def size_power_experiment(
        spec: GeneratorSpec,
        test: TestId,
        alpha: float,
        reps: int,
        master_seed: int,
        threads: int | None = None,
        variance: WeibullVariance = "classic"
) -> SimulationReport:
    """Rejection rate and null-distribution fit of a test by simulation.

    Replications whose fit or test fails are excluded and counted.

    Args:
        spec: Data-generating process.
        test: Test id.
        alpha: Level.
        reps: Number of replications, at least 100.
        master_seed: Master seed.
        threads: Worker threads; defaults to and capped by CALPHA_THREADS.
        variance: Weibull shape information variant.
    Returns:
        The aggregated report.
    Raises:
        ValueError: If reps < 100 or the test does not fit the model.
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps must be at least {MIN_REPS}, got {reps}")
    _check_pairing(spec, test)

    def replicate(rep: int) -> tuple[float, bool, int] | None:
        try:
            draw = draw_replication(spec, master_seed, rep)
            report, _ = run_test(test, draw.data, alpha, variance)
        except FIT_FAILURES as failure:
            logger.debug(f"Replication {rep} excluded: {failure}")
            return None
        return report.statistic, report.reject, draw.resampled

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        outcomes = list(pool.map(replicate, range(reps)))

    kept = [o for o in outcomes if o is not None]
    excluded = reps - len(kept)
    if not kept:
        raise ConvergenceError(f"all {reps} replications failed")
    values = np.array([o[0] for o in kept])
    rate = float(np.mean([o[1] for o in kept]))

    if test == "gaussian-panel":
        m = binomial_mixture(2)
        ks = _mixture_ks(values, m.weights, m.dfs)
        mass_at_zero = float(np.mean(values == 0.0))
    else:
        ks = float(stats.kstest(values, "norm").statistic)
        mass_at_zero = float(np.mean(values <= 0.0))

    predicted = None
    if spec.delta is not None and MATCHED_FORM.get(test) == spec.form:
        J_resid = _residual_information(spec, test, master_seed)
        predicted = power_prediction(spec.delta, J_resid, alpha)

    logger.info(
        f"{test}: {len(kept)} of {reps} replications, "
        f"rejection rate {rate:.4f}, {excluded} excluded"
    )
    return SimulationReport(
        test=test,
        spec=spec,
        alpha=alpha,
        reps=reps,
        completed=len(kept),
        excluded=excluded,
        resampled=sum(o[2] for o in kept),
        rejection_rate=rate,
        rejection_se=sqrt(rate * (1.0 - rate) / len(kept)),
        statistic_mean=float(np.mean(values)),
        statistic_variance=float(np.var(values, ddof=1))
        if len(kept) > 1 else float("nan"),
        statistic_skew=float(stats.skew(values)),
        ks_distance_to_null=ks,
        mass_at_zero=mass_at_zero,
        null_distribution=null_distribution_tag(test),
        predicted_rejection_rate=predicted,
        master_seed=master_seed,
        per_rep_seed_rule=PER_REP_SEED_RULE
    )


def _residual_information(
        spec: GeneratorSpec,
        test: TestId,
        master_seed: int
) -> float:
    """Residual information at the true parameters on the rep-0 null data.

    The Weibull shape always enters with its expected information, the
    population value the local power depends on.
    """
    null_spec = spec.model_copy(update={"xi": 0.0, "delta": None})
    data = draw_replication(null_spec, master_seed, 0).data
    truth = spec.full_truth()
    sd = decomposition_at(test, data, truth, "expected")
    return float(residual_score(sd)[1][0, 0])


def lan_diagnostic(
        delta1: float,
        n_grid: list[int],
        reps: int,
        master_seed: int,
        lambda0: float = 2.0,
        threads: int | None = None
) -> list[LANSummary]:
    """Compare the exact log-likelihood ratio with its quadratic expansion.

    Data are Poisson(lambda0) under the null; the alternative mixes
    lambda0 exp(+-xi_n) with equal weights, xi_n = delta1 n^(-1/4).

    Args:
        delta1: Local alternative scale.
        n_grid: Sample sizes.
        reps: Replications per sample size.
        master_seed: Master seed.
        lambda0: Null Poisson rate.
        threads: Worker threads.
    Returns:
        One summary per n.
    """
    J = 0.25 * (2.0 * lambda0 ** 2 + lambda0)
    t = delta1 * delta1
    summaries = []
    for n in n_grid:
        xi = delta1 * n ** -0.25

        def replicate(rep: int, n=n, xi=xi) -> tuple[float, float]:
            rng = replication_rng(master_seed, rep, STREAM_OUTCOME, n)
            x = rng.poisson(lambda0, n).astype(float)
            S = float(np.sum(0.5 * ((x - lambda0) ** 2 - lambda0))) / sqrt(n)
            if xi == 0.0:
                return 0.0, S
            up = x * xi - lambda0 * np.expm1(xi)
            down = -x * xi - lambda0 * np.expm1(-xi)
            Lambda = float(np.sum(np.logaddexp(up, down) - log(2.0)))
            return Lambda - (t * S - 0.5 * t * t * J), S

        with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
            outcomes = list(pool.map(replicate, range(reps)))
        residuals = np.abs([o[0] for o in outcomes])
        scores = np.array([o[1] for o in outcomes])
        centred = scores - scores.mean()
        variance = float(np.var(scores, ddof=1))
        m4 = float(np.mean(centred ** 4))
        summaries.append(LANSummary(
            n=n,
            reps=reps,
            xi_n=xi,
            median_abs_residual=float(np.median(residuals)),
            score_variance=variance,
            score_variance_se=sqrt(max(m4 - variance ** 2, 0.0) / reps),
            J_xx=J
        ))
        logger.info(
            f"LAN n={n}: median residual "
            f"{summaries[-1].median_abs_residual:.4g}"
        )
    return summaries


def plugin_diagnostic(
        spec: GeneratorSpec,
        test: TestId,
        n_grid: list[int],
        reps: int,
        master_seed: int,
        force_truth: bool = False,
        threads: int | None = None,
        variance: WeibullVariance = "classic"
) -> list[PluginSummary]:
    """Median |Z_n(theta_hat) - Z_n(theta_0)| per sample size.

    Args:
        spec: Data-generating process; its n is replaced by each grid value.
        test: Scalar test id.
        n_grid: Sample sizes.
        reps: Replications per sample size.
        master_seed: Master seed.
        force_truth: Plug in theta_0 for theta_hat.
        threads: Worker threads.
        variance: Weibull shape information variant.
    Returns:
        One summary per n.
    Raises:
        ValueError: If `test` is the joint panel test.
    """
    if test == "gaussian-panel":
        raise ValueError("plugin_diagnostic needs a scalar test")
    _check_pairing(spec, test)
    truth = spec.full_truth()
    summaries = []
    for n in n_grid:
        sized = spec.model_copy(update={"n": n})

        def replicate(rep: int, sized=sized) -> float | None:
            try:
                data = draw_replication(sized, master_seed, rep).data
                if force_truth:
                    estimates = truth
                else:
                    fit = run_test(test, data, 0.05, variance)[1]
                    estimates = fit.estimates
                at_hat = decomposition_at(test, data, estimates, variance)
                at_truth = decomposition_at(test, data, truth, variance)
                return abs(z_statistic(at_hat) - z_statistic(at_truth))
            except FIT_FAILURES as failure:
                logger.debug(f"Replication {rep} excluded: {failure}")
                return None

        with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
            outcomes = list(pool.map(replicate, range(reps)))
        kept = [o for o in outcomes if o is not None]
        summaries.append(PluginSummary(
            n=n,
            completed=len(kept),
            excluded=reps - len(kept),
            median_abs_discrepancy=float(np.median(kept))
            if kept else float("nan")
        ))
    return summaries


def null_distribution_tag(test: TestId) -> str:
    """Name of the null law a test's statistic is compared against."""
    if test == "gaussian-panel":
        return str(binomial_mixture(2))
    return STANDARD_NORMAL
