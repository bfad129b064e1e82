"""Unit tests for loading, validating and summarizing household data."""

import io

import numpy as np
import pandas as pd
import pytest

from mitadml.core.data import load_dataset, restrict_band, summarize, validate, write_dataset
from mitadml.core.exceptions import EmptyInput, MissingColumn, NotEnoughRows, ParseError
from mitadml.models import config
from mitadml.models.dataset import ROLES, ColumnSchema
from tests.conftest import HEADER, SMALL_ROWS, csv_text


def test_load_dataset_binds_every_role(small_csv):
    """Test that every schema role is bound and row order is preserved."""
    ds = load_dataset(small_csv.encode("utf-8"))

    assert ds.n == 8
    assert list(ds.frame.columns) == ROLES
    assert ds.frame["dist_boundary"].tolist()[:3] == [12.5, 30.0, 55.0]
    assert ds.frame["district_id"].tolist()[0] == "D01"
    assert ds.n_clusters == 4
    assert ds.treated_share == pytest.approx(0.5)


def test_load_dataset_from_path(tmp_path, small_csv):
    """Test loading from a file path."""
    path = tmp_path / "households.csv"
    path.write_text(small_csv, encoding="utf-8")

    ds = load_dataset(path)

    assert ds.n == 8


def test_load_dataset_keeps_extra_columns():
    """Test that extra columns are preserved but kept apart from the roles."""
    rows = [row + ",north" for row in SMALL_ROWS]
    ds = load_dataset(csv_text(rows, HEADER + ",region").encode())

    assert ds.extra_columns == ["region"]
    assert ds.frame["region"].tolist() == ["north"] * 8


def test_header_only_is_empty_input():
    """Test that a header without rows raises EmptyInput."""
    with pytest.raises(EmptyInput):
        load_dataset(csv_text([]).encode())


def test_missing_district_column():
    """Test that a missing column is named in the error."""
    header = HEADER.replace(",district", "")
    rows = [row.rsplit(",", 1)[0] for row in SMALL_ROWS]

    with pytest.raises(MissingColumn) as excinfo:
        load_dataset(csv_text(rows, header).encode())

    assert excinfo.value.column == "district_id"
    assert "district_id" in str(excinfo.value)


def test_parse_error_reports_row_and_column():
    """Test that a non-numeric cell reports its row and column index."""
    rows = list(SMALL_ROWS)
    rows[2] = rows[2].replace("9.80", "far")

    with pytest.raises(ParseError) as excinfo:
        load_dataset(csv_text(rows).encode())

    assert excinfo.value.row == 2
    assert excinfo.value.column == 3


def test_blank_cell_is_rejected():
    """Test that missing values are rejected at load time."""
    rows = list(SMALL_ROWS)
    rows[5] = rows[5].replace(",D03", ",")

    with pytest.raises(ParseError) as excinfo:
        load_dataset(csv_text(rows).encode())

    assert excinfo.value.row == 5
    assert excinfo.value.column == 14


def test_ragged_row_is_a_parse_error():
    """Test that a row with extra fields reports its row and first extra column."""
    rows = list(SMALL_ROWS)
    rows[3] = rows[3] + ",x,y"

    with pytest.raises(ParseError) as excinfo:
        load_dataset(csv_text(rows).encode())

    assert excinfo.value.row == 3
    assert excinfo.value.column == 15


def test_invalid_utf8_is_a_parse_error():
    """Test that undecodable bytes report their location."""
    text = csv_text(SMALL_ROWS).encode()
    offset = text.index(b"D02")
    data = text[:offset] + b"\xff" + text[offset + 1 :]

    with pytest.raises(ParseError) as excinfo:
        load_dataset(data)

    assert excinfo.value.row == 2
    assert excinfo.value.column == 14
    assert excinfo.value.details["offset"] == offset


def test_schema_sidecar_remaps_headers(tmp_path, small_csv):
    """Test that a JSON sidecar can rename header columns."""
    sidecar = tmp_path / "schema.json"
    sidecar.write_text('{"treated": "mita_dummy", "hh_cons": "log_consumption"}')
    text = small_csv.replace("mita,", "treated,", 1).replace("lhhequiv", "hh_cons", 1)

    ds = load_dataset(text.encode(), ColumnSchema.from_sidecar(sidecar))

    assert ds.frame["mita_dummy"].sum() == 4
    assert ds.frame["log_consumption"].iloc[0] == pytest.approx(5.41)


def test_round_trip_through_csv(small_csv):
    """Test that writing and reloading a dataset gives identical records."""
    ds = load_dataset(small_csv.encode())
    buffer = io.StringIO()
    write_dataset(ds, buffer)

    again = load_dataset(buffer.getvalue().encode())

    assert again.equals(ds)


def test_round_trip_of_simulated_data(tmp_path, synthetic_ds):
    """Test that simulated data round-trips with full float precision."""
    path = tmp_path / "synthetic.csv"
    write_dataset(synthetic_ds, path)

    again = load_dataset(path)

    pd.testing.assert_frame_equal(again.frame, synthetic_ds.frame, check_dtype=False)
    assert validate(again) == []


def test_summarize_statistics(small_csv):
    """Test summary statistics with the n-1 denominator and linear quantiles."""
    ds = load_dataset(small_csv.encode())
    summary = summarize(ds)

    values = ds.frame["log_consumption"].to_numpy()
    stats = summary["log_consumption"]
    assert stats.count == 8
    assert stats.mean == pytest.approx(values.mean())
    assert stats.std == pytest.approx(values.std(ddof=1))
    assert stats.q25 == pytest.approx(np.quantile(values, 0.25))
    assert stats.min <= stats.q25 <= stats.q50 <= stats.q75 <= stats.max
    assert "district_id" not in summary.columns


def test_summary_frame_layout(small_csv):
    """Test that the summary frame has one column per variable."""
    frame = summarize(load_dataset(small_csv.encode())).to_frame()

    assert list(frame.index) == [
        "Count",
        "Mean",
        "Standard Dev.",
        "Minimum",
        "25%",
        "50%",
        "75%",
        "Maximum",
    ]
    assert frame.loc["Count", "mita_dummy"] == 8


def test_summarize_single_row_is_not_enough():
    """Test that one row cannot produce a standard deviation."""
    ds = load_dataset(csv_text(SMALL_ROWS[:1]).encode())

    with pytest.raises(NotEnoughRows):
        summarize(ds)


@pytest.mark.parametrize("band,expected", [(100.0, 6), (75.0, 4), (50.0, 2)])
def test_restrict_band_is_strict(small_csv, band, expected):
    """Test that rows exactly on the band edge are excluded."""
    ds = load_dataset(small_csv.encode())

    assert restrict_band(ds, band).n == expected


def test_restrict_band_properties(small_csv):
    """Test idempotence, monotonicity and that the input is untouched."""
    ds = load_dataset(small_csv.encode())
    narrow = restrict_band(ds, 50.0)
    wide = restrict_band(ds, 100.0)

    assert restrict_band(narrow, 50.0).equals(narrow)
    assert set(narrow.frame["dist_boundary"]) <= set(wide.frame["dist_boundary"])
    assert restrict_band(ds, 1e6).equals(ds)
    assert ds.n == 8


def test_restrict_band_can_include_edge(small_csv, monkeypatch):
    """Test that the comparison constant switches to an inclusive band."""
    monkeypatch.setattr(config, "BAND_COMPARISON", "le")
    ds = load_dataset(small_csv.encode())

    assert restrict_band(ds, 75.0).n == 5


def test_restrict_band_rejects_non_positive(small_csv):
    """Test that a non-positive band is an argument error."""
    ds = load_dataset(small_csv.encode())

    with pytest.raises(ValueError):
        restrict_band(ds, 0.0)


def test_validate_clean_dataset(small_csv):
    """Test that a clean dataset has no violations."""
    assert validate(load_dataset(small_csv.encode())) == []


def test_validate_reports_bad_treatment():
    """Test that a non-binary treatment is reported on its row."""
    rows = list(SMALL_ROWS)
    rows[3] = "2" + rows[3][1:]

    violations = validate(load_dataset(csv_text(rows).encode()))

    assert len(violations) == 1
    assert violations[0].row == 3
    assert violations[0].column == "mita_dummy"


def test_validate_reports_negative_count():
    """Test that a negative count violates the count rule."""
    rows = list(SMALL_ROWS)
    rows[1] = rows[1].replace(",1,1,3,", ",1,-1,3,")

    violations = validate(load_dataset(csv_text(rows).encode()))

    assert [(v.row, v.column, v.rule) for v in violations] == [(1, "n_children", "count ≥ 0")]


def test_validate_reports_boundary_distance():
    """Test that a zero distance to the boundary is a violation."""
    rows = list(SMALL_ROWS)
    rows[0] = rows[0].replace(",12.5,", ",0,")

    violations = validate(load_dataset(csv_text(rows).encode()))

    assert [v.rule for v in violations] == ["dist_boundary > 0"]
