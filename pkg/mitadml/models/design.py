from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from mitadml.models.dataset import NUMERIC_ROLES


class Panel(str, Enum):
    """Running variable of the polynomial control block."""

    LAT_LON = "lat_lon"
    DIST_POTOSI = "dist_potosi"
    DIST_BOUNDARY = "dist_boundary"

    @property
    def letter(self) -> str:
        return {"lat_lon": "A", "dist_potosi": "B", "dist_boundary": "C"}[self.value]

    @classmethod
    def from_letter(cls, letter: str) -> "Panel":
        lookup = {p.letter: p for p in cls}
        key = letter.strip().upper()
        if key in lookup:
            return lookup[key]
        return cls(letter.strip().lower())


class DesignSpec(BaseModel):
    """
    Specification of one regression design.

    Accepts the short JSON aliases geo, fe, demo and intercept as well as the
    field names.
    """

    model_config = ConfigDict(populate_by_name=True, ser_json_inf_nan="constants")

    panel: Panel = Field(description="Running variable of the polynomial block")
    band_km: float = Field(
        default=float("inf"),
        description="Keep records with dist_boundary inside this band",
        gt=0,
    )
    include_geo_controls: bool = Field(
        default=True, alias="geo", description="Add elevation and slope"
    )
    include_boundary_fe: bool = Field(
        default=True, alias="fe", description="Add boundary segment indicators seg1..seg3"
    )
    include_demographics: bool = Field(
        default=True, alias="demo", description="Add infants, children and adults"
    )
    include_intercept: bool = Field(
        default=True, alias="intercept", description="Add an all-ones column"
    )
    extra_controls: List[str] = Field(
        default_factory=list,
        description="Additional dataset roles entered as linear terms",
    )

    @field_validator("extra_controls")
    @classmethod
    def _known_roles(cls, value: List[str]) -> List[str]:
        unknown = [r for r in value if r not in NUMERIC_ROLES or r == "mita_dummy"]
        if unknown:
            raise ValueError(f"extra_controls must name numeric covariate roles: {unknown}")
        return value


class DesignMatrix(BaseModel):
    """Outcome, treatment, covariate block and clusters of one design."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    cluster_ids: np.ndarray
    column_names: List[str]
    include_intercept: bool = True

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def regressors(self) -> np.ndarray:
        """The OLS regressor matrix [d | x]."""
        return np.column_stack([self.d, self.x])

    @property
    def regressor_names(self) -> List[str]:
        return ["mita"] + list(self.column_names)

    def features(self, drop_intercept: bool = True) -> np.ndarray:
        """Covariates for nuisance learners, which fit their own bias term."""
        if drop_intercept and self.include_intercept:
            keep = [j for j, name in enumerate(self.column_names) if name != "const"]
            return self.x[:, keep]
        return self.x

    def take(self, rows: np.ndarray) -> "DesignMatrix":
        """Row subset, preserving column layout."""
        return DesignMatrix(
            y=self.y[rows],
            d=self.d[rows],
            x=self.x[rows],
            cluster_ids=self.cluster_ids[rows],
            column_names=list(self.column_names),
            include_intercept=self.include_intercept,
        )
