"""Output helpers: atomic file writes, TSV/JSON rendering and table typography."""

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

logger = logging.getLogger("mitadml")

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """
    Write text to a file by writing a temp file and renaming it into place.

    Args:
        path: Destination path
        text: File content

    Returns:
        The destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def format_number(value: Any, digits: int = 6) -> str:
    """Format a numeric TSV field at the given number of significant digits."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.{digits}g}"
    return str(value)


def to_tsv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], digits: int = 6) -> str:
    """
    Render rows as tab-separated text with a header line.

    Args:
        rows: Records keyed by column name
        columns: Column order
        digits: Significant digits for floats

    Returns:
        TSV text ending with a newline
    """
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(format_number(row.get(c), digits) for c in columns))
    return "\n".join(lines) + "\n"


def parse_tsv(text: str) -> List[Dict[str, str]]:
    """Parse TSV text produced by to_tsv back into string-valued records."""
    lines = [line for line in text.splitlines() if line]
    if not lines:
        return []
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


def to_json(payload: Any) -> str:
    """Serialize a JSON payload deterministically (sorted keys, full float precision)."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


def stars_for(p_value: float) -> str:
    """Significance stars: *** p<0.01, ** p<0.05, * p<0.10."""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.10:
        return "*"
    return ""


def format_cell(coef: float, se: float, stars: str) -> List[str]:
    """Two-line cell: coefficient with stars above the standard error in parentheses."""
    return [f"{coef:.4f}{stars}", f"({se:.3f})"]


def render_grid(
    title: str,
    subtitle: str,
    column_headers: Sequence[str],
    panels: Sequence[Tuple[str, Sequence[Tuple[str, Sequence[str]]]]],
    footer: Sequence[Tuple[str, Sequence[str]]] = (),
    notes: Optional[str] = None,
) -> str:
    """
    Render a panels-by-columns results table as aligned text.

    Args:
        title: Table title line
        subtitle: Dependent-variable line
        column_headers: Column headings
        panels: (heading, rows) pairs; each row is a label and per-column strings
        footer: Footer rows, each a label and per-column strings
        notes: Optional notes paragraph

    Returns:
        Table text
    """
    all_rows = [row for _, rows in panels for row in rows] + list(footer)
    label_width = max([len("Sample Within:")] + [len(label) for label, _ in all_rows]) + 2
    widths = []
    for j, header in enumerate(column_headers):
        content = [len(header)] + [len(values[j]) for _, values in all_rows if j < len(values)]
        widths.append(max(content) + 3)

    def _row(label: str, values: Sequence[str]) -> str:
        return label.ljust(label_width) + "".join(v.rjust(w) for v, w in zip(values, widths))

    total = label_width + sum(widths)
    out = [title.center(total).rstrip(), subtitle.center(total).rstrip(), "-" * total]
    out.append(_row("Sample Within:", column_headers))
    out.append("-" * total)
    for heading, rows in panels:
        out.append(heading)
        for label, values in rows:
            out.append(_row(label, values))
    out.append("-" * total)
    for label, values in footer:
        out.append(_row(label, values))
    out.append("-" * total)
    if notes:
        out.append(notes)
    return "\n".join(out) + "\n"
