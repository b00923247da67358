# SPDX-License-Identifier: MIT
# Copyright (c) 2025 René Lacher
import json
from math import sqrt
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from calpha_het.cli import (
    EXIT_CONVERGENCE,
    EXIT_INPUT,
    EXIT_OK,
    export,
    ingest,
    main,
    parse_config,
    render,
    run,
    sanitize,
    schema_text
)
from calpha_het.config import REPORT_SCHEMA
from calpha_het.data import CountData, DurationData, PanelData
from calpha_het.errors import ConvergenceError, DataError
from calpha_het.schemas import (
    Command,
    GeneratorSpec,
    OutputFormat,
    ReportEnvelope
)
from calpha_het.simlab import generate


@pytest.fixture
def counts_csv(tmp_path):
    """Writes y = (0, 1, 2, 3) without covariates and returns its path."""
    path = tmp_path / "counts.csv"
    path.write_text("y\n0\n1\n2\n3\n")
    return path


def _write(tmp_path, name: str, text: str):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_ingest_counts(tmp_path):
    """Ensures a counts CSV becomes CountData with an intercept."""
    d = ingest(_write(tmp_path, "c.csv", "y,x1\n0,0\n2,1\n"),
               "poisson-secmom")
    assert isinstance(d, CountData)
    assert (d.n, d.k) == (2, 1)
    np.testing.assert_array_equal(d.X[:, 0], [1.0, 1.0])


def test_ingest_negative_duration(tmp_path):
    """Ensures t = -1 is reported at row 1, column t."""
    path = _write(tmp_path, "t.csv", "t,x1\n-1,0\n2,1\n3,0\n")
    with pytest.raises(DataError) as error:
        ingest(path, "cox-exp")
    assert (error.value.row, error.value.column) == (1, "t")


def test_ingest_missing_cell(tmp_path):
    """Ensures an empty cell names its row and column."""
    path = _write(tmp_path, "c.csv", "y,x1\n1,0\n2,\n3,1\n")
    with pytest.raises(DataError) as error:
        ingest(path, "poisson-secfac")
    assert (error.value.row, error.value.column) == (2, "x1")


def test_ingest_unbalanced_panel(tmp_path):
    """Ensures a missing (id=3, period=2) cell is an unbalanced panel."""
    rows = ["id,period,y", "1,1,0.1", "1,2,0.2", "2,1,0.3", "2,2,0.4",
            "3,1,0.5"]
    path = _write(tmp_path, "p.csv", "\n".join(rows) + "\n")
    with pytest.raises(DataError, match="id=3, period=2"):
        ingest(path, "gaussian-panel")


def test_ingest_panel_long_format(tmp_path):
    """Ensures rows in any order are pivoted onto the N x T grid."""
    rows = ["id,period,y", "2,2,4", "1,1,1", "2,1,3", "1,2,2"]
    d = ingest(_write(tmp_path, "p.csv", "\n".join(rows) + "\n"),
               "gaussian-panel")
    np.testing.assert_array_equal(d.Y, [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize(
    "text, message",
    [
        ("count,x1\n1,0\n", "leading columns"),
        ("", "empty"),
        ("y,x1\n", "no rows"),
        ("y\n1\nabc\n", "non-numeric"),
    ],
)
def test_ingest_schema_errors(tmp_path, text, message):
    """Ensures malformed files raise DataError."""
    with pytest.raises(DataError, match=message):
        ingest(_write(tmp_path, "bad.csv", text), "poisson-secmom")


def test_ingest_missing_file_and_model(tmp_path):
    """Ensures missing files and unknown model ids are rejected."""
    with pytest.raises(DataError, match="does not exist"):
        ingest(tmp_path / "absent.csv", "poisson-secmom")
    with pytest.raises(ValueError, match="Unknown model"):
        ingest(tmp_path / "absent.csv", "logit")


@pytest.mark.parametrize(
    "spec, model",
    [
        (GeneratorSpec(model="poisson", n=30, covariates="uniform"),
         "poisson-secmom"),
        (GeneratorSpec(model="weibull_ph", n=30, covariates="uniform"),
         "cox-weibull"),
        (GeneratorSpec(model="gaussian_panel", n=6, T=3), "gaussian-panel"),
    ],
)
def test_export_then_ingest_is_exact(tmp_path, spec, model):
    """Ensures exported generator data re-ingest bit-identically."""
    d = generate(spec, 12)
    path = tmp_path / "export.csv"
    export(d, path)
    again = ingest(path, model)
    if isinstance(d, PanelData):
        np.testing.assert_array_equal(again.Y, d.Y)
    else:
        field = "t" if isinstance(d, DurationData) else "y"
        np.testing.assert_array_equal(getattr(again, field),
                                      getattr(d, field))
        np.testing.assert_array_equal(again.X, d.X)


def test_sanitize_non_finite():
    """Ensures non-finite numbers become null with a reason code."""
    clean, reasons = sanitize(
        {"a": float("nan"), "b": [1.0, float("inf")], "c": {"d": 2}}
    )
    assert clean == {"a": None, "b": [1.0, None], "c": {"d": 2}}
    assert reasons == {"a": "non_finite", "b[1]": "non_finite"}


def test_render_json_envelope():
    """Ensures JSON reports carry schema, version, command and seed."""
    text = render(Command.predict_power, {"power": 0.5}, 7, OutputFormat.json)
    envelope = json.loads(text)
    assert envelope["schema"] == REPORT_SCHEMA
    assert envelope["command"] == "predict-power"
    assert envelope["seed"] == 7
    assert envelope["report"] == {"power": 0.5}
    assert envelope["null_reasons"] == {}
    assert text == render(Command.predict_power, {"power": 0.5}, 7,
                          OutputFormat.json)


@pytest.mark.parametrize("argv", [
    ["test", "--model", "poisson-secmom"],
    ["predict-power", "--delta", "1.5", "--j-resid", "2.0"],
    ["simulate", "--model", "poisson-secmom", "--n", "60",
     "--reps", "100", "--seed", "9"]
])
def test_rendered_reports_match_envelope(tmp_path, counts_csv, argv):
    """Ensures every command writes JSON that validates as an envelope."""
    out = tmp_path / "report.json"
    if "--model" in argv and argv[0] != "simulate":
        argv = argv + ["--data", str(counts_csv)]
    assert main(argv + ["--output", str(out)]) == EXIT_OK
    envelope = ReportEnvelope.model_validate_json(out.read_text())
    assert envelope.command.value == argv[0]
    assert envelope.schema_id == REPORT_SCHEMA


def test_render_non_finite_matches_envelope():
    """Ensures null values and their reasons validate as an envelope."""
    text = render(Command.test, {"statistic": float("nan")}, None,
                  OutputFormat.json)
    envelope = ReportEnvelope.model_validate_json(text)
    assert envelope.report == {"statistic": None}
    assert envelope.null_reasons == {"statistic": "non_finite"}


def test_schema_command(tmp_path):
    """Ensures the schema command publishes the envelope JSON Schema."""
    out = tmp_path / "schema.json"
    assert main(["schema", "--output", str(out)]) == EXIT_OK
    schema = json.loads(out.read_text())
    assert out.read_text() == schema_text()
    assert set(schema["required"]) == {"command", "report"}
    assert {"schema", "version", "seed", "null_reasons"} <= \
        set(schema["properties"])


def test_render_csv_row():
    """Ensures CSV reports are one flattened row behind the envelope."""
    text = render(Command.compare_im, {"b": 1.0, "a": {"c": 2}}, None,
                  OutputFormat.csv)
    header, row = text.strip().splitlines()
    assert header == "schema,version,command,seed,a.c,b"
    assert row.startswith(f"{REPORT_SCHEMA},")


@pytest.mark.parametrize(
    "argv",
    [
        ["predict-power", "--delta", "1", "--j-resid", "-1"],
        ["predict-power", "--delta", "1", "--j-resid", "1",
         "--alpha", "0.6"],
    ],
)
def test_parse_config_validation(argv):
    """Ensures invalid parameters raise ValidationError."""
    with pytest.raises(ValidationError):
        parse_config(argv)


def test_main_invalid_arguments_exit_code():
    """Ensures validation failures exit with code 2."""
    assert main(["predict-power", "--delta", "1", "--j-resid", "0"]) == \
        EXIT_INPUT


def test_argparse_rejects_unknown_model():
    """Ensures unknown choices exit through argparse with code 2."""
    with pytest.raises(SystemExit) as exit_info:
        main(["test", "--model", "logit", "--data", "x.csv"])
    assert exit_info.value.code == 2


@pytest.mark.parametrize(
    "error, code",
    [
        (ConvergenceError("diverged"), EXIT_CONVERGENCE),
        (DataError("bad cell", row=2, column="y"), EXIT_INPUT),
    ],
)
def test_run_exit_codes(counts_csv, error, code):
    """Ensures pipeline errors map onto exit codes."""
    config = parse_config(["test", "--model", "poisson-secmom",
                           "--data", str(counts_csv)])
    with patch("calpha_het.cli.execute", side_effect=error):
        assert run(config) == code


def test_main_test_command(tmp_path, counts_csv):
    """Ensures the test command writes statistic, beta_hat and n."""
    out = tmp_path / "report.json"
    code = main(["test", "--model", "poisson-secmom", "--data",
                 str(counts_csv), "--alpha", "0.05", "--out", "json",
                 "--output", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())["report"]
    assert report["statistic"] == pytest.approx(-1.0 / sqrt(18.0))
    assert report["beta_hat"] == pytest.approx([np.log(1.5)])
    assert report["n"] == 4
    assert report["reject"] is False
    assert 0.0 < report["p_value"] < 1.0


def test_main_predict_power(tmp_path):
    """Ensures predict-power reports 1 - Phi(z - delta^2 sqrt(J))."""
    out = tmp_path / "power.json"
    code = main(["predict-power", "--delta", "1.5", "--j-resid", "2.0",
                 "--alpha", "0.05", "--output", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())["report"]
    assert report["power"] == pytest.approx(0.9379, abs=5e-4)


def test_main_compare_im(tmp_path):
    """Ensures compare-im reports the equivalence verdict."""
    rng = np.random.default_rng(4)
    x = rng.uniform(size=80)
    y = rng.poisson(np.exp(0.5 + x))
    lines = ["y,x1"] + [f"{a},{b:.17g}" for a, b in zip(y, x)]
    data = _write(tmp_path, "c.csv", "\n".join(lines) + "\n")
    out = tmp_path / "im.json"
    code = main(["compare-im", "--model", "poisson", "--data", str(data),
                 "--k", "identity", "--output", str(out)])
    assert code == EXIT_OK
    envelope = ReportEnvelope.model_validate_json(out.read_text())
    assert envelope.report["equivalent"] is True
