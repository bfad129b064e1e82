from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from mitadml.models.config import DEFAULT_SEED
from mitadml.models.design import DesignSpec, Panel
from mitadml.models.estimate import DmlConfig, Estimand
from mitadml.models.learner import LearnerKind, LearnerSpec


class EffectMode(str, Enum):
    """How the treatment effect varies with distance to Potosi."""

    CONSTANT = "constant"
    LINEAR = "linear"
    STEP = "step"


class GForm(str, Enum):
    """Shape of the baseline outcome function."""

    LINEAR = "linear"
    NONLINEAR = "nonlinear"
    STEP = "step"


class DgpConfig(BaseModel):
    """Synthetic data generating process calibrated to the household survey moments."""

    n: int = Field(default=2000, description="Number of households", ge=100)
    true_theta: float = Field(default=-0.3, description="Base treatment effect")
    effect_mode: EffectMode = Field(default=EffectMode.CONSTANT, description="Effect heterogeneity")
    effect_slope: float = Field(
        default=0.0, description="Effect change per sd of distance to Potosi (linear mode)"
    )
    g_form: GForm = Field(default=GForm.LINEAR, description="Baseline outcome function")
    selection_strength: float = Field(
        default=1.0, description="Scale of the selection index in the propensity"
    )
    noise_sd: float = Field(default=0.9, description="Outcome noise standard deviation", ge=0)
    target_treated_share: float = Field(
        default=0.752368, description="Population share of treated households", gt=0, lt=1
    )
    potosi_boundary_corr: float = Field(
        default=0.4,
        description="Copula correlation between distance to Potosi and to the boundary",
        gt=-1,
        lt=1,
    )
    n_districts: int = Field(default=71, description="Number of district clusters", ge=2)
    seed: int = Field(default=DEFAULT_SEED, description="Sampling seed")


class GroundTruth(BaseModel):
    """Population estimands of a DGP."""

    ate: float
    atte: float
    plr_limit: float = Field(description="Variance-weighted effect targeted by partialling out")
    treated_share: float
    intercept: float = Field(description="Calibrated intercept of the propensity index")

    def for_estimand(self, key: str) -> float:
        return float(getattr(self, key))


class EstimatorKind(str, Enum):
    PLR = "plr"
    IRM_ATE = "irm_ate"
    IRM_ATTE = "irm_atte"
    PLUG_IN = "plugin"
    OLS = "ols"
    DIFF_IN_MEANS = "diff_in_means"

    @property
    def estimand(self) -> Optional[Estimand]:
        return {
            "plr": Estimand.PLR,
            "irm_ate": Estimand.IRM_ATE,
            "irm_atte": Estimand.IRM_ATTE,
            "plugin": Estimand.PLUG_IN,
        }.get(self.value)

    @property
    def truth_key(self) -> str:
        if self.estimand is not None:
            return self.estimand.truth_key
        return "plr_limit" if self is EstimatorKind.OLS else "ate"


def simulation_design() -> DesignSpec:
    """Panel B design with distance to the boundary added so selection covariates enter X."""
    return DesignSpec(
        panel=Panel.DIST_POTOSI,
        geo=True,
        fe=True,
        demo=True,
        intercept=True,
        extra_controls=["dist_boundary"],
    )


def linear_dml_config() -> DmlConfig:
    """Ridge outcome regressions with a logistic propensity."""
    return DmlConfig(
        outcome_learner=LearnerSpec(kind=LearnerKind.LINEAR_RIDGE),
        treatment_learner=LearnerSpec(kind=LearnerKind.LOGISTIC),
    )


class EstimatorSpec(BaseModel):
    """An estimator the Monte Carlo harness can run on each replication."""

    kind: EstimatorKind = Field(default=EstimatorKind.PLR, description="Estimator")
    design: DesignSpec = Field(default_factory=simulation_design, description="Design of X")
    dml: DmlConfig = Field(default_factory=linear_dml_config, description="DML settings")


class McReport(BaseModel):
    """Bias, RMSE and coverage of an estimator over Monte Carlo replications."""

    estimator: EstimatorKind
    truth_key: str
    truth: float
    reps: int
    mean_bias: float
    rmse: float = Field(ge=0)
    coverage95: float = Field(ge=0, le=1)
    mean_se: float
    sd_theta: float
    mc_se: float
    rep_ids: List[int]
    estimates: List[float]
    ses: List[float]
    failures: Dict[int, str] = Field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude={"rep_ids", "estimates", "ses"})

    def rows(self) -> List[Dict[str, Any]]:
        """Per-replication records for TSV output."""
        return [
            {
                "rep": rep,
                "theta": theta,
                "se": se,
                "covered": int(abs(theta - self.truth) <= 1.96 * se),
            }
            for rep, theta, se in zip(self.rep_ids, self.estimates, self.ses)
        ]
