# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Defines schemas for reports, fits, generator specs and run configs."""
from enum import Enum
from math import isclose, log
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator
)

from calpha_het.config import APP_VERSION, DEFAULT_ALPHA, REPORT_SCHEMA

TestId = Literal[
    "poisson-secmom",
    "poisson-secfac",
    "cox-exp",
    "cox-weibull",
    "gaussian-panel"
]
IMModel = Literal["poisson", "gaussian"]
KSpec = Literal["constant", "identity", "sqrt"]
WeibullVariance = Literal["classic", "expected"]
GeneratorModel = Literal[
    "poisson",
    "exponential_ph",
    "weibull_ph",
    "gaussian_panel"
]
UDist = Literal["gaussian", "rademacher", "centered_exponential"]
HeterogeneityForm = Literal["multiplicative_exp", "additive", "sqrt_scaled"]
CovariateScheme = Literal["none", "bernoulli", "uniform"]

STANDARD_NORMAL = "standard_normal"
BOUNDARY_TOL = 1e-9


class ChiBarMixture(BaseModel):
    """Weighted mixture of central chi-squared laws.

    `df = 0` denotes the point mass at zero.
    """
    model_config = ConfigDict(frozen=True)

    weights: tuple[float, ...]
    dfs: tuple[int, ...]

    @model_validator(mode="after")
    def validate_components(self) -> "ChiBarMixture":
        """Ensure weights form a distribution over increasing dfs.

        Returns:
            The validated mixture.
        Raises:
            ValueError: If lengths differ, a weight leaves [0, 1], the
            weights do not sum to one or the dfs are not strictly
            increasing nonnegative integers.
        """
        if len(self.weights) != len(self.dfs) or not self.weights:
            raise ValueError("weights and dfs must be non-empty and aligned")
        if any(w < 0.0 or w > 1.0 for w in self.weights):
            raise ValueError("mixture weights must lie in [0, 1]")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(
                f"mixture weights sum to {sum(self.weights)!r}, not 1"
            )
        if self.dfs[0] < 0 or any(
            b <= a for a, b in zip(self.dfs, self.dfs[1:])
        ):
            raise ValueError("dfs must be strictly increasing and >= 0")
        return self

    @property
    def components(self) -> list[tuple[float, int]]:
        """(weight, df) pairs."""
        return list(zip(self.weights, self.dfs))

    @property
    def mass_at_zero(self) -> float:
        return self.weights[0] if self.dfs[0] == 0 else 0.0

    def __str__(self) -> str:
        return " + ".join(
            f"{w:.6g}*chi2({df})" for w, df in self.components
        )


class TestReport(BaseModel):
    """Outcome of a C(alpha) heterogeneity test.

    `critical_value` is on the scale of `statistic`: the standard normal
    quantile for scalar tests, the mixture quantile for cone tests.
    """
    __test__ = False

    test: str
    statistic: float
    components: list[float] | None = None
    null_distribution: ChiBarMixture | Literal["standard_normal"]
    critical_value: float
    p_value: float = Field(ge=0.0, le=1.0)
    alpha: float = Field(gt=0.0, lt=1.0)
    reject: bool
    nuisance_estimates: dict[str, float] = Field(default_factory=dict)
    n: int = Field(ge=1)
    warnings: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_decision(self) -> "TestReport":
        """Ensure decision, p-value and critical value agree.

        Agreement is not enforced within a small band around the
        boundary, where rounding decides.

        Returns:
            The validated report.
        Raises:
            ValueError: If the three representations of the decision
            disagree.
        """
        on_boundary = (
            isclose(self.statistic, self.critical_value,
                    rel_tol=BOUNDARY_TOL, abs_tol=BOUNDARY_TOL)
            or isclose(self.p_value, self.alpha, abs_tol=BOUNDARY_TOL)
        )
        if on_boundary:
            return self
        if self.reject != (self.statistic > self.critical_value):
            raise ValueError("reject disagrees with critical value")
        if self.reject != (self.p_value <= self.alpha):
            raise ValueError("reject disagrees with p-value")
        return self


class FitResult(BaseModel):
    """Restricted maximum likelihood fit of a null model."""
    model: str
    estimates: dict[str, float]
    iterations: int = Field(ge=0)
    gradient_norm: float
    tolerance: float
    converged: bool
    loglik: float
    trace: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_convergence(self) -> "FitResult":
        """Ensure a converged fit honours its tolerance.

        Returns:
            The validated fit.
        Raises:
            ValueError: If `converged` is set with a gradient norm at or
            above the tolerance.
        """
        if self.converged and not self.gradient_norm < self.tolerance:
            raise ValueError(
                f"converged fit has gradient norm {self.gradient_norm} "
                f">= tolerance {self.tolerance}"
            )
        return self

    @property
    def beta(self) -> np.ndarray:
        """Regression coefficients beta0..betak as an array."""
        keys = sorted(
            (k for k in self.estimates if k.startswith("beta")),
            key=lambda k: int(k[4:])
        )
        return np.array([self.estimates[k] for k in keys])


class EquivalenceReport(BaseModel):
    """Comparison of the intercept IM statistic with a C(alpha) statistic."""
    model: IMModel
    k: KSpec
    im_value: float
    calpha_value: float
    abs_diff: float
    identity1_residual: float
    identity2_residual: float
    equivalent: bool

    @model_validator(mode="after")
    def validate_verdict(self) -> "EquivalenceReport":
        """Ensure an equivalence verdict is backed by the values.

        Returns:
            The validated report.
        Raises:
            ValueError: If `equivalent` is set while the statistics differ
            by 1e-8 or more.
        """
        if self.equivalent and not self.abs_diff < 1e-8:
            raise ValueError("equivalent report with abs_diff >= 1e-8")
        return self


class GeneratorSpec(BaseModel):
    """Data-generating process for one Monte Carlo replication.

    `truth` holds the nuisance parameters: `beta0..betak` for the
    regression models, `alpha` (Weibull shape), `mu` and `sigma2` for the
    Gaussian panel. Missing entries take model defaults.
    """
    model: GeneratorModel
    truth: dict[str, float] = Field(default_factory=dict)
    xi: float = Field(default=0.0, ge=0.0)
    xi_scale: float = Field(default=0.0, ge=0.0)
    delta: float | None = None
    u_dist: UDist = "gaussian"
    form: HeterogeneityForm = "multiplicative_exp"
    n: int = Field(ge=2)
    T: int = Field(default=1, ge=1)
    covariates: CovariateScheme = "none"

    @model_validator(mode="after")
    def validate_model_fields(self) -> "GeneratorSpec":
        """Ensure the truth and panel shape fit the chosen model.

        Returns:
            The validated spec.
        Raises:
            ValueError: If a panel has T < 2, the Weibull shape or the panel
            variance is nonpositive.
        """
        truth = self.full_truth()
        if self.model == "gaussian_panel":
            if self.T < 2:
                raise ValueError("gaussian_panel requires T >= 2")
            if truth["sigma2"] <= 0:
                raise ValueError("sigma2 must be positive")
        if self.model == "weibull_ph" and truth["alpha"] <= 0:
            raise ValueError("Weibull shape alpha must be positive")
        return self

    def full_truth(self) -> dict[str, float]:
        """Nuisance truth with model defaults filled in."""
        if self.model == "gaussian_panel":
            defaults = {"mu": 0.0, "sigma2": 1.0}
        else:
            defaults = {"beta0": log(2.0) if self.model == "poisson" else 0.0}
            if self.covariates != "none":
                defaults["beta1"] = 0.5
            if self.model == "weibull_ph":
                defaults["alpha"] = 1.5
        return {**defaults, **self.truth}

    def magnitudes(self) -> tuple[float, float]:
        """Heterogeneity magnitudes actually used for generation.

        A local alternative `delta` sets xi_n = delta * n**(-1/4), on both
        panel components.
        """
        if self.delta is None:
            return self.xi, self.xi_scale
        local = abs(self.delta) * self.n ** -0.25
        if self.model == "gaussian_panel":
            return local, local
        return local, 0.0


class SimulationReport(BaseModel):
    """Aggregate of a seeded size/power experiment."""
    test: TestId
    spec: GeneratorSpec
    alpha: float
    reps: int
    completed: int
    excluded: int
    resampled: int
    rejection_rate: float = Field(ge=0.0, le=1.0)
    rejection_se: float
    statistic_mean: float
    statistic_variance: float
    statistic_skew: float
    ks_distance_to_null: float
    mass_at_zero: float
    null_distribution: str
    predicted_rejection_rate: float | None = None
    master_seed: int
    per_rep_seed_rule: str


class Command(str, Enum):
    "Enum of CLI subcommands."
    test = "test"
    simulate = "simulate"
    compare_im = "compare-im"
    predict_power = "predict-power"
    schema = "schema"


class OutputFormat(str, Enum):
    "Enum of report formats."
    json = "json"
    csv = "csv"


class ReportEnvelope(BaseModel):
    """Versioned wrapper around every JSON report.

    Non-finite numbers in `report` are written as null; `null_reasons`
    maps their dotted paths to a reason.
    """
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    schema_id: str = Field(default=REPORT_SCHEMA, alias="schema")
    version: str = APP_VERSION
    command: Command
    seed: int | None = None
    report: dict[str, Any]
    null_reasons: dict[str, Literal["non_finite"]] = Field(
        default_factory=dict
    )


class RunConfig(BaseModel):
    """Validated parameters of one CLI invocation."""
    command: Command
    model: str | None = None
    data: Path | None = None
    alpha: float = DEFAULT_ALPHA
    seed: int | None = Field(default=None, ge=0)
    reps: int | None = Field(default=None, ge=1)
    n: int | None = Field(default=None, ge=2)
    T: int | None = Field(default=None, ge=1)
    xi: float = Field(default=0.0, ge=0.0)
    xi_scale: float = Field(default=0.0, ge=0.0)
    delta: float | None = None
    u_dist: UDist = "gaussian"
    form: HeterogeneityForm = "multiplicative_exp"
    covariates: CovariateScheme = "none"
    k: KSpec | None = None
    variance: WeibullVariance = "classic"
    j_resid: float | None = None
    out: OutputFormat = OutputFormat.json
    output: Path | None = None
    threads: int | None = Field(default=None, ge=1)

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, alpha: float) -> float:
        """Ensure the level lies in (0, 0.5).

        Args:
            alpha: The significance level.
        Returns:
            The validated level.
        Raises:
            ValueError: If `alpha` is outside (0, 0.5).
        """
        if not 0.0 < alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        return alpha

    @model_validator(mode="after")
    def validate_required(self) -> "RunConfig":
        """Ensure the fields each command needs are present.

        Returns:
            The validated config.
        Raises:
            ValueError: If a required field is missing or a model id does
            not belong to the command.
        """
        test_ids = TestId.__args__
        if self.command is Command.test:
            if self.model not in test_ids:
                raise ValueError(f"test needs --model in {test_ids}")
            if self.data is None:
                raise ValueError("test needs --data")
        elif self.command is Command.simulate:
            if self.model not in test_ids:
                raise ValueError(f"simulate needs --model in {test_ids}")
            if self.n is None:
                raise ValueError("simulate needs --n (or --N)")
        elif self.command is Command.compare_im:
            if self.model not in IMModel.__args__:
                raise ValueError("compare-im needs --model poisson|gaussian")
            if self.data is None or self.k is None:
                raise ValueError("compare-im needs --data and --k")
        elif self.command is Command.predict_power:
            if self.delta is None or self.j_resid is None:
                raise ValueError("predict-power needs --delta and --j-resid")
            if self.j_resid <= 0:
                raise ValueError("--j-resid must be positive")
        return self

    def __str__(self) -> str:
        """Return a string representation of the run parameters.

        Returns:
            A string summarizing the command, model and seed.
        """
        return (
            f"command={self.command.value}, "
            f"model={self.model}, "
            f"alpha={self.alpha}, "
            f"seed={self.seed}"
        )


class LANSummary(BaseModel):
    """Quadratic log-likelihood-ratio approximation quality at one n."""
    n: int
    reps: int
    xi_n: float
    median_abs_residual: float
    score_variance: float
    score_variance_se: float
    J_xx: float


class PluginSummary(BaseModel):
    """Plug-in discrepancy |Z_n(theta_hat) - Z_n(theta_0)| at one n."""
    n: int
    completed: int
    excluded: int
    median_abs_discrepancy: float
