from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from mitadml.models.config import DEFAULT_SEED
from mitadml.models.design import Panel
from mitadml.models.learner import LearnerKind, LearnerSpec

REPLICATION_BANDS: Tuple[float, ...] = (100.0, 75.0, 50.0)


class OlsFit(BaseModel):
    """Least-squares fit of y on the regressors [d | x]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: np.ndarray
    residuals: np.ndarray
    vcov: np.ndarray
    xtx_inv: np.ndarray
    r_squared: float
    n: int
    k: int
    column_names: List[str]

    def coef(self, name: str = "mita") -> float:
        return float(self.beta[self.column_names.index(name)])

    def se(self, name: str = "mita") -> float:
        j = self.column_names.index(name)
        return float(np.sqrt(self.vcov[j, j]))


class CellResult(BaseModel):
    """One cell of the replication grid."""

    panel: Panel
    band_km: float
    coef: float
    se: float = Field(ge=0)
    t_stat: float
    p_value: float = Field(ge=0, le=1)
    stars: str
    n: int
    clusters: int
    r_squared: float
    treated_share: Optional[float] = None

    def row(self) -> Dict[str, Any]:
        """TSV record for this cell."""
        return {
            "panel": self.panel.letter,
            "band_km": int(self.band_km) if float(self.band_km).is_integer() else self.band_km,
            "coef": self.coef,
            "se": self.se,
            "stars": self.stars,
            "n": self.n,
            "clusters": self.clusters,
            "r2": self.r_squared,
        }


class Table2Result(BaseModel):
    """The 3x3 grid of replication cells, keyed by panel and band."""

    cells: List[CellResult]

    def cell(self, panel: Panel, band_km: float) -> CellResult:
        for cell in self.cells:
            if cell.panel is panel and cell.band_km == band_km:
                return cell
        raise KeyError(f"No cell for panel {panel.letter} band {band_km}")


class FoldPlan(BaseModel):
    """Assignment of n rows to k cross-fitting folds."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int
    k_folds: int
    assignment: np.ndarray
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> List[int]:
        return np.bincount(self.assignment, minlength=self.k_folds).tolist()


class Estimand(str, Enum):
    PLR = "PLR"
    IRM_ATE = "IRM_ATE"
    IRM_ATTE = "IRM_ATTE"
    PLUG_IN = "PLUG_IN"

    @property
    def truth_key(self) -> str:
        """Ground-truth field this estimand targets."""
        if self is Estimand.IRM_ATTE:
            return "atte"
        if self in (Estimand.PLR, Estimand.PLUG_IN):
            return "plr_limit"
        return "ate"


def _default_outcome_learner() -> LearnerSpec:
    return LearnerSpec(kind=LearnerKind.MLP_REGRESSOR)


def _default_treatment_learner() -> LearnerSpec:
    return LearnerSpec(kind=LearnerKind.MLP_CLASSIFIER)


class DmlConfig(BaseModel):
    """Cross-fitting configuration of a double machine learning run."""

    k_folds: int = Field(default=5, description="Number of cross-fitting folds", ge=2)
    n_repeats: int = Field(
        default=1, description="Independent fold draws; estimates are aggregated", ge=1
    )
    outcome_learner: LearnerSpec = Field(
        default_factory=_default_outcome_learner, description="Learner for outcome regressions"
    )
    treatment_learner: LearnerSpec = Field(
        default_factory=_default_treatment_learner, description="Learner for the propensity"
    )
    propensity_clip: float = Field(
        default=0.01, description="Propensities are clipped into [clip, 1 - clip]", gt=0, lt=0.5
    )
    seed: int = Field(default=DEFAULT_SEED, description="Base seed for folds and learners")
    cross_fit: bool = Field(
        default=True,
        description="False fits nuisances on all rows and evaluates in-sample (diagnostic)",
    )
    cluster_variance: bool = Field(
        default=False, description="Aggregate scores by cluster before the variance"
    )


class FoldDiagnostics(BaseModel):
    """Held-out nuisance losses and clipping counts of one fold."""

    repeat: int = 0
    fold: int
    n_train: int
    n_test: int
    outcome_loss: float
    treatment_loss: Optional[float] = None
    n_clipped: int = 0


class EffectEstimate(BaseModel):
    """Point estimate, standard error and scores of a DML run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    estimand: Estimand
    theta: float
    se: float = Field(ge=0)
    ci95: Tuple[float, float]
    p_value: float
    stars: str
    n: int
    psi: np.ndarray
    fold_diagnostics: List[FoldDiagnostics] = Field(default_factory=list)
    thetas_by_repeat: List[float] = Field(default_factory=list)
    degenerate: bool = False

    @property
    def n_clipped(self) -> int:
        return sum(f.n_clipped for f in self.fold_diagnostics)

    def to_dict(self, include_psi: bool = False) -> Dict[str, Any]:
        """JSON-ready record; the score vector is included only on request."""
        payload = self.model_dump(mode="json", exclude={"psi"})
        payload["ci95"] = list(self.ci95)
        if include_psi:
            payload["psi"] = self.psi.tolist()
        return payload


class ProbeEntry(BaseModel):
    """Score sensitivity for one perturbation direction and size."""

    direction: str
    delta: float
    sensitivity: float
    sample_sensitivity: float


class ProbeReport(BaseModel):
    """Orthogonality probe results across a ladder of perturbation sizes."""

    estimand: Estimand
    theta: float
    entries: List[ProbeEntry]

    @field_validator("entries")
    @classmethod
    def _sorted(cls, value: List[ProbeEntry]) -> List[ProbeEntry]:
        return sorted(value, key=lambda e: (e.direction, -e.delta))

    def directions(self) -> List[str]:
        return sorted(set(e.direction for e in self.entries))

    def ladder(self, direction: str) -> List[ProbeEntry]:
        return [e for e in self.entries if e.direction == direction]
