import io
import logging
import re
from pathlib import Path
from typing import BinaryIO, List, Optional, TextIO, Union

import numpy as np
import pandas as pd

from mitadml.core.exceptions import EmptyInput, MissingColumn, NotEnoughRows, ParseError
from mitadml.models import config
from mitadml.models.dataset import (
    NUMERIC_ROLES,
    ROLE_KINDS,
    ROLES,
    ColumnSchema,
    ColumnSummary,
    Dataset,
    SummaryTable,
    Violation,
)

logger = logging.getLogger("mitadml")

Source = Union[str, Path, bytes, BinaryIO, TextIO]


_TOKENIZE_ERROR = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")


def _decode(source: Source) -> str:
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    elif not isinstance(source, bytes):
        source = source.read()
        if isinstance(source, str):
            return source
    try:
        return source.decode("utf-8")
    except UnicodeDecodeError as e:
        head = source[: e.start]
        row = head.count(b"\n") - 1
        column = head[head.rfind(b"\n") + 1 :].count(b",")
        error = ParseError(f"Invalid UTF-8 byte at offset {e.start}", row=row, column=column)
        error.details["offset"] = e.start
        raise error from e


def _read_raw(source: Source) -> pd.DataFrame:
    text = _decode(source)
    try:
        return pd.read_csv(
            io.StringIO(text),
            sep=",",
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        raise EmptyInput("Input has no header row")
    except pd.errors.ParserError as e:
        match = _TOKENIZE_ERROR.search(str(e))
        if match is None:
            raise ParseError(f"Malformed delimited text: {e}", row=-1, column=-1) from e
        expected, line, _ = (int(g) for g in match.groups())
        # line counts from 1 and includes the header
        raise ParseError(
            f"Row has too many fields: {match.group(0)}", row=line - 2, column=expected
        ) from e


def load_dataset(source: Source, schema: Optional[ColumnSchema] = None) -> Dataset:
    """
    Load household records from comma-delimited UTF-8 text.

    Args:
        source: Path, raw bytes or an open stream with a header row
        schema: Header-name bindings for the schema roles

    Returns:
        Dataset with columns named by role; extra columns are kept as text

    Raises:
        MissingColumn: If a schema column is absent from the header
        ParseError: If a cell is empty or not numeric where a number is required
        EmptyInput: If there is no header or no data row
    """
    schema = schema or ColumnSchema()
    raw = _read_raw(source)
    header = list(raw.columns)

    for role in ROLES:
        name = schema.header_for(role)
        if name not in raw.columns:
            raise MissingColumn(role, header=name)

    if len(raw) == 0:
        raise EmptyInput()

    columns = {}
    for role in ROLES:
        name = schema.header_for(role)
        col_index = header.index(name)
        text = raw[name].str.strip()
        blank = (text == "").to_numpy()
        if blank.any():
            row = int(np.flatnonzero(blank)[0])
            raise ParseError(f"Missing value in column {name!r}", row=row, column=col_index)
        if ROLE_KINDS[role] == "categorical":
            columns[role] = text.reset_index(drop=True)
            continue
        values = pd.to_numeric(text, errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"Cannot parse {text.iloc[row]!r} in column {name!r} as a number",
                row=row,
                column=col_index,
            )
        columns[role] = values.astype(np.float64).reset_index(drop=True)

    bound = set(schema.header_for(role) for role in ROLES)
    extras = [c for c in header if c not in bound]
    frame = pd.DataFrame(columns)
    for name in extras:
        frame[name] = raw[name].reset_index(drop=True)

    ds = Dataset(frame=frame, extra_columns=extras)
    logger.info(f"Loaded {ds.n} records ({ds.n_clusters} districts)")
    return ds


def write_dataset(
    ds: Dataset,
    dest: Union[str, Path, TextIO],
    schema: Optional[ColumnSchema] = None,
) -> None:
    """
    Serialize a dataset in the comma-delimited dialect read by load_dataset.

    Floats are written with 17 significant digits so a reload is exact.

    Args:
        ds: Dataset to write
        dest: Destination path or text stream
        schema: Header-name bindings for the schema roles
    """
    from mitadml.core.report import atomic_write_text

    schema = schema or ColumnSchema()
    frame = ds.frame.rename(columns={role: schema.header_for(role) for role in ROLES})
    text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    if isinstance(dest, (str, Path)):
        atomic_write_text(dest, text)
    else:
        dest.write(text)


def summarize(ds: Dataset) -> SummaryTable:
    """
    Compute descriptive statistics for every numeric schema column.

    Quantiles interpolate linearly between order statistics and the standard
    deviation uses the n-1 denominator.

    Args:
        ds: Dataset to summarize

    Returns:
        Summary table

    Raises:
        EmptyInput: If the dataset has no rows
        NotEnoughRows: If the dataset has a single row
    """
    if ds.n == 0:
        raise EmptyInput("Cannot summarize an empty dataset")
    if ds.n < 2:
        raise NotEnoughRows("Standard deviation needs at least 2 rows", {"n": ds.n})

    described = ds.frame[NUMERIC_ROLES].describe(percentiles=[0.25, 0.5, 0.75])
    columns = {}
    for role in NUMERIC_ROLES:
        stats = described[role]
        columns[role] = ColumnSummary(
            count=int(stats["count"]),
            mean=float(stats["mean"]),
            std=float(stats["std"]),
            min=float(stats["min"]),
            q25=float(stats["25%"]),
            q50=float(stats["50%"]),
            q75=float(stats["75%"]),
            max=float(stats["max"]),
        )
    return SummaryTable(columns=columns)


def restrict_band(ds: Dataset, band_km: float) -> Dataset:
    """
    Keep the records whose distance to the boundary is within the band.

    Args:
        ds: Dataset to restrict
        band_km: Band width in the units of dist_boundary

    Returns:
        New dataset with row order preserved (may be empty)

    Raises:
        ValueError: If band_km is not positive
    """
    if not band_km > 0:
        raise ValueError(f"band_km must be positive, got {band_km}")
    dist = ds.frame["dist_boundary"].to_numpy()
    if config.BAND_COMPARISON == "le":
        mask = dist <= band_km
    else:
        mask = dist < band_km
    frame = ds.frame.loc[mask].reset_index(drop=True)
    logger.debug(f"Band {band_km}: kept {len(frame)} of {ds.n} records")
    return ds.with_frame(frame)


def validate(ds: Dataset) -> List[Violation]:
    """
    Check every record against the schema invariants.

    Args:
        ds: Dataset to check

    Returns:
        One violation per failed (row, column, rule); empty when the dataset is clean
    """
    found = []
    for role in ROLES:
        kind = ROLE_KINDS[role]
        col = ds.frame[role]
        if kind == "categorical":
            bad = (col.astype(str).str.strip() == "").to_numpy()
            found.extend(
                (int(i), role, "nonempty district", col.iloc[i]) for i in np.flatnonzero(bad)
            )
            continue

        values = col.to_numpy(dtype=np.float64)
        finite = np.isfinite(values)
        for i in np.flatnonzero(~finite):
            found.append((int(i), role, "finite", float(values[i])))

        if kind == "binary":
            bad = finite & ~np.isin(values, (0.0, 1.0))
            found.extend(
                (int(i), role, "binary ∈ {0,1}", float(values[i])) for i in np.flatnonzero(bad)
            )
        elif kind == "count":
            not_integer = finite & (values != np.round(values))
            negative = finite & (values < 0)
            found.extend(
                (int(i), role, "integer count", float(values[i]))
                for i in np.flatnonzero(not_integer)
            )
            found.extend(
                (int(i), role, "count ≥ 0", float(values[i])) for i in np.flatnonzero(negative)
            )
        elif role == "dist_boundary":
            bad = finite & (values <= 0)
            found.extend(
                (int(i), role, "dist_boundary > 0", float(values[i])) for i in np.flatnonzero(bad)
            )

    order = {role: k for k, role in enumerate(ROLES)}
    found.sort(key=lambda v: (v[0], order[v[1]]))
    violations = [Violation(row=r, column=c, rule=rule, value=v) for r, c, rule, v in found]
    if violations:
        logger.warning(f"Dataset has {len(violations)} schema violations")
    return violations
