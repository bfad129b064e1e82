import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

# Schema roles and their semantic kinds, in canonical column order.
ROLE_KINDS: Dict[str, str] = {
    "mita_dummy": "binary",
    "longitude": "real",
    "latitude": "real",
    "dist_potosi": "real",
    "dist_boundary": "real",
    "elevation": "real",
    "slope": "real",
    "n_infants": "count",
    "n_children": "count",
    "n_adults": "count",
    "seg1": "binary",
    "seg2": "binary",
    "seg3": "binary",
    "log_consumption": "real",
    "district_id": "categorical",
}

ROLES: List[str] = list(ROLE_KINDS)
NUMERIC_ROLES: List[str] = [r for r, kind in ROLE_KINDS.items() if kind != "categorical"]


class ColumnSchema(BaseModel):
    """Maps each schema role to the header name used in the delimited file."""

    mita_dummy: str = "mita"
    longitude: str = "lon"
    latitude: str = "lat"
    dist_potosi: str = "dpot"
    dist_boundary: str = "dbnd"
    elevation: str = "elev"
    slope: str = "slope"
    n_infants: str = "infants"
    n_children: str = "children"
    n_adults: str = "adults"
    seg1: str = "seg1"
    seg2: str = "seg2"
    seg3: str = "seg3"
    log_consumption: str = "lhhequiv"
    district_id: str = "district"

    def header_for(self, role: str) -> str:
        """Return the header name bound to a role."""
        return getattr(self, role)

    def role_by_header(self) -> Dict[str, str]:
        """Return the inverse mapping, header name to role."""
        return {self.header_for(role): role for role in ROLES}

    @classmethod
    def from_sidecar(cls, path: Union[str, Path]) -> "ColumnSchema":
        """
        Load a schema from a JSON sidecar that remaps header names to roles.

        The sidecar is an object of the form {"header name": "role"}; roles not
        named keep their default header.

        Args:
            path: Path to the JSON sidecar

        Returns:
            Column schema
        """
        from mitadml.core.exceptions import ConfigError

        try:
            remap = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"Cannot read schema sidecar {path}: {e}")
        if not isinstance(remap, dict):
            raise ConfigError(f"Schema sidecar {path} must be a JSON object")
        unknown = sorted(set(remap.values()) - set(ROLES))
        if unknown:
            raise ConfigError(f"Unknown schema roles in sidecar: {', '.join(unknown)}")
        return cls(**{role: header for header, role in remap.items()})


class Dataset(BaseModel):
    """
    Household records conforming to the column schema.

    Columns of ``frame`` are named by schema role; extra input columns are
    kept under their original header names. Treat instances as immutable:
    every operation returns a new Dataset.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frame: pd.DataFrame
    extra_columns: List[str] = Field(default_factory=list)

    @property
    def n(self) -> int:
        return int(len(self.frame))

    def column(self, role: str) -> pd.Series:
        return self.frame[role]

    @property
    def treated_share(self) -> float:
        if self.n == 0:
            return float("nan")
        return float(self.frame["mita_dummy"].mean())

    @property
    def n_clusters(self) -> int:
        return int(self.frame["district_id"].nunique())

    def with_frame(self, frame: pd.DataFrame) -> "Dataset":
        return Dataset(frame=frame, extra_columns=list(self.extra_columns))

    def equals(self, other: "Dataset") -> bool:
        """Value equality of the underlying records."""
        return self.extra_columns == other.extra_columns and self.frame.equals(other.frame)


class ColumnSummary(BaseModel):
    """Summary statistics for one column."""

    count: int
    mean: float
    std: float = Field(ge=0)
    min: float
    q25: float
    q50: float
    q75: float
    max: float


class SummaryTable(BaseModel):
    """Per-column summary statistics in the layout of a descriptive table."""

    columns: Dict[str, ColumnSummary]

    def __getitem__(self, role: str) -> ColumnSummary:
        return self.columns[role]

    def to_frame(self) -> pd.DataFrame:
        """Statistics as rows (Count, Mean, ...) and columns per variable."""
        frame = pd.DataFrame({role: s.model_dump() for role, s in self.columns.items()})
        frame.index = ["Count", "Mean", "Standard Dev.", "Minimum", "25%", "50%", "75%", "Maximum"]
        return frame


class Violation(BaseModel):
    """One schema invariant violation."""

    row: int
    column: str
    rule: str
    value: Optional[Union[float, str]] = None
