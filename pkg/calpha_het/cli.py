# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
"""Command-line front end

Ingests CSV datasets, runs tests, simulation campaigns and IM
comparisons, and writes machine-readable reports.

CSV schemas:
    counts      header `y,x1..xk`
    durations   header `t,x1..xk`
    regression  header `y,x1..xk`
    panel       long format `id,period,y` over a complete N x T grid
"""
import argparse
import json
import logging
from math import isfinite
from pathlib import Path
import sys

import numpy as np
import pandas as pd
from pydantic import ValidationError

from calpha_het.config import DEFAULT_REPS, DEFAULT_SEED_BITS
from calpha_het.data import (
    CountData,
    DurationData,
    PanelData,
    RegressionData,
    with_intercept
)
from calpha_het.errors import ConvergenceError, DataError
from calpha_het.im_test import check_equivalence
from calpha_het.models import run_test
from calpha_het.schemas import (
    CovariateScheme,
    Command,
    GeneratorSpec,
    HeterogeneityForm,
    IMModel,
    KSpec,
    OutputFormat,
    ReportEnvelope,
    RunConfig,
    TestId,
    UDist,
    WeibullVariance
)
from calpha_het.simlab import power_prediction, size_power_experiment

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
NON_FINITE = "non_finite"
EXPORT_FLOAT_FORMAT = "%.17g"

DATA_KINDS = {
    "poisson-secmom": "counts",
    "poisson-secfac": "counts",
    "cox-exp": "durations",
    "cox-weibull": "durations",
    "gaussian-panel": "panel",
    "poisson": "counts",
    "gaussian": "regression"
}
RESPONSE_COLUMNS = {"counts": "y", "durations": "t", "regression": "y"}
CONTAINERS = {
    "counts": CountData,
    "durations": DurationData,
    "regression": RegressionData
}
PANEL_COLUMNS = ["id", "period", "y"]
SIM_GENERATORS = {
    "poisson-secmom": "poisson",
    "poisson-secfac": "poisson",
    "cox-exp": "exponential_ph",
    "cox-weibull": "weibull_ph",
    "gaussian-panel": "gaussian_panel"
}

logger = logging.getLogger(__name__)


def _read_numeric(path: Path, expected: list[str] | None) -> pd.DataFrame:
    """Read a CSV file and coerce every cell to a float.

    Raises:
        DataError: If the file is missing or empty, a header does not
        match, or a cell is missing or non-numeric.
    """
    if not path.is_file():
        raise DataError(f"data file {path} does not exist")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError as empty:
        raise DataError(f"data file {path} is empty") from empty
    except pd.errors.ParserError as parser_error:
        raise DataError(f"cannot parse {path}: {parser_error}") \
            from parser_error
    if expected is not None:
        header = list(frame.columns[:len(expected)])
        if header != expected:
            raise DataError(
                f"expected leading columns {expected}, got {header}",
                row=0,
                column=header[0] if header else None
            )
    if frame.empty:
        raise DataError(f"data file {path} has no rows")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        column = str(frame.columns[col])
        raise DataError(
            f"missing or non-numeric value at row {row + 1}, "
            f"column {column}",
            row=int(row) + 1,
            column=column
        )
    return numeric.astype(float)


def _panel(frame: pd.DataFrame) -> PanelData:
    """Pivot a long panel to its N x T matrix, demanding a full grid."""
    keys = frame[["id", "period"]]
    duplicated = keys.duplicated().to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0]) + 1
        raise DataError(
            f"duplicate (id, period) at row {row}", row=row, column="period"
        )
    wide = frame.pivot(index="id", columns="period", values="y")
    wide = wide.sort_index().sort_index(axis=1)
    missing = wide.isna().to_numpy()
    if missing.any():
        i, j = np.argwhere(missing)[0]
        unit, period = wide.index[i], wide.columns[j]
        logger.warning(f"Unbalanced panel: no y for id={unit:g}, "
                       f"period={period:g}")
        raise DataError(
            f"unbalanced panel: missing cell id={unit:g}, "
            f"period={period:g}",
            column="y"
        )
    return PanelData(wide.to_numpy())


def ingest(path: Path | str, model: str):
    """Load a CSV dataset as the observation set a model consumes.

    Args:
        path: CSV file.
        model: A test id, or "poisson"/"gaussian" for IM comparisons.
    Returns:
        CountData, DurationData, RegressionData or PanelData; the
        intercept column is prepended to regression designs.
    Raises:
        ValueError: If `model` is unknown.
        DataError: If the file violates its schema; `row` (1-based data
        row) and `column` name the offending cell where known.
    """
    if model not in DATA_KINDS:
        raise ValueError(f"Unknown model id {model!r}")
    kind = DATA_KINDS[model]
    path = Path(path)
    if kind == "panel":
        return _panel(_read_numeric(path, PANEL_COLUMNS))

    response = RESPONSE_COLUMNS[kind]
    frame = _read_numeric(path, [response])
    covariates = frame.drop(columns=response).to_numpy()
    data = CONTAINERS[kind](
        frame[response].to_numpy(), with_intercept(covariates)
    )
    logger.info(f"Ingested {kind} data from {path}: n={data.n}, k={data.k}")
    return data


def export(data, path: Path | str) -> None:
    """Write an observation set in the CSV schema `ingest` reads.

    Floats carry 17 significant digits so re-ingestion is exact.
    """
    path = Path(path)
    if isinstance(data, PanelData):
        N, T = data.Y.shape
        frame = pd.DataFrame({
            "id": np.repeat(np.arange(1, N + 1), T),
            "period": np.tile(np.arange(1, T + 1), N),
            "y": data.Y.ravel()
        })
    else:
        response = "t" if isinstance(data, DurationData) else "y"
        columns = {response: getattr(data, response)}
        for j in range(1, data.X.shape[1]):
            columns[f"x{j}"] = data.X[:, j]
        frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format=EXPORT_FLOAT_FORMAT)


def entropy_seed() -> int:
    """Fresh master seed from OS entropy, recorded in the report."""
    return int(np.random.SeedSequence().entropy % 2 ** DEFAULT_SEED_BITS)


def _generator_spec(config: RunConfig) -> GeneratorSpec:
    model = SIM_GENERATORS[config.model]
    return GeneratorSpec(
        model=model,
        xi=config.xi,
        xi_scale=config.xi_scale,
        delta=config.delta,
        u_dist=config.u_dist,
        form=config.form,
        n=config.n,
        T=config.T or 1,
        covariates=config.covariates
    )


def execute(config: RunConfig) -> tuple[dict, int | None]:
    """Run one command.

    Args:
        config: Validated run parameters.
    Returns:
        A tuple (report, seed) with the report as a JSON-ready dict and
        the master seed actually used.
    """
    seed = config.seed
    if config.command is Command.test:
        data = ingest(config.data, config.model)
        report, fit = run_test(
            config.model, data, config.alpha, config.variance
        )
        payload = report.model_dump()
        if config.model != "gaussian-panel":
            payload["beta_hat"] = fit.beta.tolist()
        payload["fit"] = {
            "iterations": fit.iterations,
            "gradient_norm": fit.gradient_norm,
            "loglik": fit.loglik
        }
        return payload, seed

    if config.command is Command.simulate:
        if seed is None:
            seed = entropy_seed()
            logger.info(f"No --seed given; using entropy seed {seed}")
        report = size_power_experiment(
            _generator_spec(config),
            config.model,
            config.alpha,
            config.reps or DEFAULT_REPS,
            seed,
            threads=config.threads,
            variance=config.variance
        )
        return report.model_dump(), seed

    if config.command is Command.compare_im:
        data = ingest(config.data, config.model)
        report = check_equivalence(config.model, data, config.k)
        return report.model_dump(), seed

    power = power_prediction(config.delta, config.j_resid, config.alpha)
    return {
        "delta": config.delta,
        "j_resid": config.j_resid,
        "alpha": config.alpha,
        "power": power
    }, seed


def sanitize(value, path: str = "", reasons: dict | None = None):
    """Replace non-finite floats by None, recording each under its path.

    Args:
        value: A JSON-ready structure.
        path: Dotted path of `value` within the report.
        reasons: Collects {path: "non_finite"}.
    Returns:
        A tuple (clean value, reasons).
    """
    reasons = {} if reasons is None else reasons
    if isinstance(value, dict):
        clean = {
            key: sanitize(item, f"{path}.{key}" if path else key, reasons)[0]
            for key, item in value.items()
        }
        return clean, reasons
    if isinstance(value, (list, tuple)):
        clean = [
            sanitize(item, f"{path}[{i}]", reasons)[0]
            for i, item in enumerate(value)
        ]
        return clean, reasons
    if isinstance(value, float) and not isfinite(value):
        reasons[path] = NON_FINITE
        return None, reasons
    return value, reasons


def render(
        command: Command,
        report: dict,
        seed: int | None,
        out: OutputFormat
) -> str:
    """Format a report with its envelope as JSON or one-row CSV."""
    clean, reasons = sanitize(report)
    envelope = ReportEnvelope(
        command=command, seed=seed, report=clean, null_reasons=reasons
    ).model_dump(mode="json", by_alias=True)
    if out is OutputFormat.json:
        return json.dumps(envelope, sort_keys=True, indent=2,
                          allow_nan=False) + "\n"
    row = pd.json_normalize(clean)
    row = row.reindex(sorted(row.columns), axis=1)
    for key in ("seed", "command", "version", "schema"):
        row.insert(0, key, envelope[key])
    return row.to_csv(index=False)


def schema_text() -> str:
    """JSON Schema of the report envelope."""
    schema = ReportEnvelope.model_json_schema(by_alias=True)
    return json.dumps(schema, sort_keys=True, indent=2) + "\n"


def run(config: RunConfig) -> int:
    """Execute a command and write its report.

    Args:
        config: Validated run parameters.
    Returns:
        Exit code: 0 on success, 2 on a data, domain or configuration
        error, 3 on a convergence failure.
    """
    logger.info(f"Running with parameters: {config}")
    if config.command is Command.schema:
        return _write(config, schema_text())
    try:
        report, seed = execute(config)
    except ConvergenceError as convergence_error:
        logger.error(f"Convergence failure: {convergence_error}")
        return EXIT_CONVERGENCE
    except ValueError as input_error:
        # DataError, DomainError, SingularityError, ValidationError
        location = ""
        if isinstance(input_error, DataError) and input_error.column:
            location = f" (row {input_error.row}, " \
                f"column {input_error.column})"
        logger.error(f"Invalid input{location}: {input_error}")
        return EXIT_INPUT

    return _write(config, render(config.command, report, seed, config.out))


def _write(config: RunConfig, text: str) -> int:
    if config.output is None:
        sys.stdout.write(text)
    else:
        config.output.write_text(text)
        logger.info(f"Report written to {config.output}")
    return EXIT_OK


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=None,
                        help="test level in (0, 0.5)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed; entropy when omitted")
    parser.add_argument("--out", choices=[f.value for f in OutputFormat],
                        default=OutputFormat.json.value,
                        help="report format")
    parser.add_argument("--output", type=Path, default=None,
                        help="report file; stdout when omitted")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per Command."""
    parser = argparse.ArgumentParser(
        prog="calpha",
        description="C(alpha) tests for unobserved heterogeneity"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    tests = list(TestId.__args__)

    test = commands.add_parser("test", help="test a CSV dataset")
    test.add_argument("--model", choices=tests, required=True)
    test.add_argument("--data", type=Path, required=True)
    test.add_argument("--variance", choices=WeibullVariance.__args__,
                      default="classic")
    _common(test)

    simulate = commands.add_parser("simulate", help="size/power experiment")
    simulate.add_argument("--model", choices=tests, required=True)
    simulate.add_argument("--n", "--N", dest="n", type=int, required=True)
    simulate.add_argument("--T", dest="T", type=int, default=None)
    simulate.add_argument("--reps", type=int, default=None)
    simulate.add_argument("--xi", type=float, default=0.0)
    simulate.add_argument("--xi-scale", type=float, default=0.0)
    simulate.add_argument("--delta", type=float, default=None)
    simulate.add_argument("--u-dist", choices=UDist.__args__,
                          default="gaussian")
    simulate.add_argument("--form", choices=HeterogeneityForm.__args__,
                          default="multiplicative_exp")
    simulate.add_argument("--covariates", choices=CovariateScheme.__args__,
                          default="none")
    simulate.add_argument("--variance", choices=WeibullVariance.__args__,
                          default="classic")
    simulate.add_argument("--threads", type=int, default=None)
    _common(simulate)

    compare = commands.add_parser("compare-im",
                                  help="IM versus C(alpha) statistic")
    compare.add_argument("--model", choices=IMModel.__args__, required=True)
    compare.add_argument("--data", type=Path, required=True)
    compare.add_argument("--k", choices=KSpec.__args__, required=True)
    _common(compare)

    predict = commands.add_parser("predict-power",
                                  help="analytic local power")
    predict.add_argument("--delta", type=float, required=True)
    predict.add_argument("--j-resid", type=float, required=True)
    _common(predict)

    schema = commands.add_parser("schema",
                                 help="JSON Schema of the report envelope")
    schema.add_argument("--output", type=Path, default=None,
                        help="schema file; stdout when omitted")
    return parser


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Parse command-line arguments into a RunConfig.

    Raises:
        ValidationError: If the arguments violate RunConfig.
    """
    args = vars(build_parser().parse_args(argv))
    fields = {k: v for k, v in args.items() if v is not None}
    return RunConfig(**fields)


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    try:
        config = parse_config(argv)
    except ValidationError as validation_error:
        logger.error(f"Invalid arguments: {validation_error}")
        return EXIT_INPUT
    return run(config)
