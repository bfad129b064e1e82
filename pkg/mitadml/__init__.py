"""
Causal estimates of the mita effect on household consumption.

This package replicates the boundary regression discontinuity grid with
district-clustered standard errors, and re-estimates the effect with cross-fitted
double machine learning (partially linear and interactive models). A calibrated
simulator and Monte Carlo harness check the estimators against known truths.
"""

__version__ = "0.1.0"

from mitadml.core.data import load_dataset, restrict_band, summarize, validate, write_dataset
from mitadml.core.design import build_design
from mitadml.core.dml import (
    dml_irm_ate,
    dml_irm_atte,
    dml_plr,
    dml_plug_in,
    estimate_effect,
    orthogonality_probe,
)
from mitadml.core.exceptions import EstimationError, InputError, MitaDMLError
from mitadml.core.ols import replicate_table2
from mitadml.core.simulate import ground_truth, monte_carlo, simulate
from mitadml.models.config import AnalysisOptions
from mitadml.models.dataset import ColumnSchema, Dataset
from mitadml.models.design import DesignSpec, Panel
from mitadml.models.estimate import DmlConfig, Estimand
from mitadml.models.learner import LearnerKind, LearnerSpec
from mitadml.models.simulation import DgpConfig, EstimatorKind, EstimatorSpec

__all__ = [
    "AnalysisOptions",
    "ColumnSchema",
    "Dataset",
    "DesignSpec",
    "DgpConfig",
    "DmlConfig",
    "Estimand",
    "EstimationError",
    "EstimatorKind",
    "EstimatorSpec",
    "InputError",
    "LearnerKind",
    "LearnerSpec",
    "MitaDMLError",
    "Panel",
    "build_design",
    "dml_irm_ate",
    "dml_irm_atte",
    "dml_plr",
    "dml_plug_in",
    "estimate_effect",
    "ground_truth",
    "load_dataset",
    "monte_carlo",
    "orthogonality_probe",
    "replicate_table2",
    "restrict_band",
    "simulate",
    "summarize",
    "validate",
    "write_dataset",
]
