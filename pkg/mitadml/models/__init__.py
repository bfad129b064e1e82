"""Models for datasets, designs, learners, estimates and simulations."""

from mitadml.models.config import AnalysisOptions
from mitadml.models.dataset import ColumnSchema, ColumnSummary, Dataset, SummaryTable, Violation
from mitadml.models.design import DesignMatrix, DesignSpec, Panel
from mitadml.models.estimate import (
    CellResult,
    DmlConfig,
    EffectEstimate,
    Estimand,
    FoldDiagnostics,
    FoldPlan,
    OlsFit,
    ProbeEntry,
    ProbeReport,
    Table2Result,
)
from mitadml.models.learner import Activation, LearnerKind, LearnerSpec, TrainedModel
from mitadml.models.manifest import RunManifest
from mitadml.models.simulation import (
    DgpConfig,
    EffectMode,
    EstimatorKind,
    EstimatorSpec,
    GForm,
    GroundTruth,
    McReport,
)

__all__ = [
    "AnalysisOptions",
    # Data models
    "ColumnSchema",
    "ColumnSummary",
    "Dataset",
    "SummaryTable",
    "Violation",
    # Design models
    "DesignMatrix",
    "DesignSpec",
    "Panel",
    # Estimate models
    "CellResult",
    "DmlConfig",
    "EffectEstimate",
    "Estimand",
    "FoldDiagnostics",
    "FoldPlan",
    "OlsFit",
    "ProbeEntry",
    "ProbeReport",
    "Table2Result",
    # Learner models
    "Activation",
    "LearnerKind",
    "LearnerSpec",
    "TrainedModel",
    # Run records
    "RunManifest",
    # Simulation models
    "DgpConfig",
    "EffectMode",
    "EstimatorKind",
    "EstimatorSpec",
    "GForm",
    "GroundTruth",
    "McReport",
]
