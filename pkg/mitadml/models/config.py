from typing import Literal

from pydantic import BaseModel, Field

# "lt" keeps rows with dist_boundary < band, "le" keeps dist_boundary <= band.
BAND_COMPARISON: Literal["lt", "le"] = "lt"

DEFAULT_SEED = 20241206


class AnalysisOptions(BaseModel):
    """Library-wide options shared by the replication and estimation runs."""

    threads: int = Field(
        default=1,
        description="Worker threads for grid cells, folds and Monte Carlo replications",
        ge=1,
    )
    cluster_correction: Literal["CR0", "CR1"] = Field(
        default="CR1",
        description="Small-sample correction for cluster-robust standard errors",
    )
    significant_digits: int = Field(
        default=6,
        description="Significant digits for numeric fields in TSV outputs",
        ge=1,
        le=17,
    )
    rank_tolerance: float = Field(
        default=1e-10,
        description="Relative tolerance of pivoted QR rank detection",
        gt=0,
    )
