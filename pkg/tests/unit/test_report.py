"""Unit tests for output helpers and seed derivation."""

import json
import math

import numpy as np
import pytest

from mitadml.core.report import (
    atomic_write_text,
    format_cell,
    format_number,
    parse_tsv,
    render_grid,
    stars_for,
    to_json,
    to_tsv,
)
from mitadml.core.seeds import derive_seed, rng_for


def test_atomic_write_creates_parents(tmp_path):
    target = tmp_path / "a" / "b" / "out.txt"

    atomic_write_text(target, "hello\n")

    assert target.read_text() == "hello\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_atomic_write_replaces(tmp_path):
    target = tmp_path / "out.txt"
    target.write_text("old")

    atomic_write_text(target, "new")

    assert target.read_text() == "new"


@pytest.mark.parametrize(
    "value,expected",
    [
        (None, ""),
        (True, "1"),
        (1478, "1478"),
        (-0.336766, "-0.336766"),
        (-0.33676612345, "-0.336766"),
        (float("nan"), "nan"),
        ("B", "B"),
    ],
)
def test_format_number(value, expected):
    assert format_number(value) == expected


def test_tsv_layout():
    rows = [{"panel": "A", "coef": -0.2164, "n": 1161}, {"panel": "B", "coef": 0.5, "n": 2}]

    text = to_tsv(rows, ["panel", "coef", "n"], digits=3)

    assert text == "panel\tcoef\tn\nA\t-0.216\t1161\nB\t0.5\t2\n"
    assert parse_tsv(text)[0] == {"panel": "A", "coef": "-0.216", "n": "1161"}
    assert parse_tsv("") == []


def test_json_is_sorted_and_keeps_non_finite():
    text = to_json({"b": 1, "a": float("inf")})

    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    assert math.isinf(json.loads(text)["a"])


@pytest.mark.parametrize(
    "p_value,stars",
    [(0.001, "***"), (0.0099, "***"), (0.01, "**"), (0.07, "*"), (0.1, ""), (0.5, "")],
)
def test_stars(p_value, stars):
    assert stars_for(p_value) == stars


def test_format_cell():
    assert format_cell(-0.33677, 0.08718, "***") == ["-0.3368***", "(0.087)"]


def test_render_grid():
    text = render_grid(
        "Title",
        "Subtitle",
        ["<100 km", "<75 km"],
        [("Panel X", [("Mita", ["-0.1***", "0.2"]), ("", ["(0.01)", "(0.5)"])])],
        [("Observations", ["10", "8"])],
        "Notes here.",
    )
    lines = text.splitlines()

    assert lines[0].strip() == "Title"
    assert lines[3].startswith("Sample Within:")
    assert "Panel X" in lines
    assert lines[-1] == "Notes here."
    widths = {len(line) for line in lines if line.startswith(("Mita", "Sample", "Observations"))}
    assert len(widths) == 1


class TestSeeds:
    def test_stable(self):
        assert derive_seed(42, "fold", 3) == derive_seed(42, "fold", 3)

    def test_labels_matter(self):
        seeds = {derive_seed(42), derive_seed(42, "a"), derive_seed(42, "b"), derive_seed(43, "a")}

        assert len(seeds) == 4

    def test_range(self):
        for label in range(50):
            assert 0 <= derive_seed(7, label) < 2**63

    def test_rng_for(self):
        expected = np.random.default_rng(derive_seed(1, "x")).normal(size=3)

        np.testing.assert_array_equal(rng_for(1, "x").normal(size=3), expected)
