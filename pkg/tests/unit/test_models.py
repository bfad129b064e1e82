"""Unit tests for configuration and record models."""

import json

import pytest
from pydantic import ValidationError

from mitadml import __version__
from mitadml.models.config import AnalysisOptions
from mitadml.models.design import DesignSpec, Panel
from mitadml.models.estimate import DmlConfig, Estimand
from mitadml.models.learner import LearnerKind, LearnerSpec
from mitadml.models.manifest import MANIFEST_NAME, RunManifest, file_digest
from mitadml.models.simulation import (
    DgpConfig,
    EstimatorKind,
    EstimatorSpec,
    McReport,
    linear_dml_config,
)


class TestDmlConfig:
    def test_defaults(self):
        cfg = DmlConfig()

        assert cfg.k_folds == 5
        assert cfg.n_repeats == 1
        assert cfg.propensity_clip == 0.01
        assert cfg.outcome_learner.kind is LearnerKind.MLP_REGRESSOR
        assert cfg.treatment_learner.kind is LearnerKind.MLP_CLASSIFIER
        assert cfg.cross_fit and not cfg.cluster_variance

    def test_json_round_trip(self):
        cfg = linear_dml_config().model_copy(update={"k_folds": 3, "seed": 9})

        assert DmlConfig.model_validate_json(cfg.model_dump_json()) == cfg

    @pytest.mark.parametrize(
        "field,value", [("k_folds", 1), ("n_repeats", 0), ("propensity_clip", 0.5)]
    )
    def test_invalid(self, field, value):
        with pytest.raises(ValidationError):
            DmlConfig(**{field: value})

    def test_partial_json_fills_defaults(self):
        cfg = DmlConfig.model_validate({"outcome_learner": {"kind": "linear_ridge"}})

        assert cfg.outcome_learner.kind is LearnerKind.LINEAR_RIDGE
        assert cfg.outcome_learner.hidden_layers == [32]


def test_learner_spec_rejects_empty_units():
    with pytest.raises(ValidationError):
        LearnerSpec(hidden_layers=[4, 0])


def test_estimand_truth_keys():
    assert Estimand.PLR.truth_key == "plr_limit"
    assert Estimand.IRM_ATE.truth_key == "ate"
    assert Estimand.IRM_ATTE.truth_key == "atte"
    assert EstimatorKind.PLUG_IN.estimand is Estimand.PLUG_IN
    assert EstimatorKind.OLS.estimand is None


def test_analysis_options():
    assert AnalysisOptions().cluster_correction == "CR1"
    with pytest.raises(ValidationError):
        AnalysisOptions(cluster_correction="CR3")


def test_dgp_config_bounds():
    with pytest.raises(ValidationError):
        DgpConfig(n=50)
    with pytest.raises(ValidationError):
        DgpConfig(target_treated_share=1.0)


def test_estimator_spec_json():
    spec = EstimatorSpec.model_validate_json(
        json.dumps({"kind": "irm_ate", "design": {"panel": "dist_boundary", "band_km": 75}})
    )

    assert spec.kind is EstimatorKind.IRM_ATE
    assert spec.design.panel is Panel.DIST_BOUNDARY
    assert spec.dml == linear_dml_config()


def test_infinite_band_serializes():
    spec = DesignSpec(panel=Panel.LAT_LON)

    assert DesignSpec.model_validate_json(spec.model_dump_json()).band_km == float("inf")


def test_mc_report_rows():
    report = McReport(
        estimator=EstimatorKind.PLR,
        truth_key="plr_limit",
        truth=-0.3,
        reps=3,
        mean_bias=0.0,
        rmse=0.1,
        coverage95=2 / 3,
        mean_se=0.05,
        sd_theta=0.1,
        mc_se=0.06,
        rep_ids=[0, 2, 3],
        estimates=[-0.3, -0.5, -0.2],
        ses=[0.05, 0.05, 0.1],
        failures={1: "EmptyDesign: No rows"},
    )

    assert [row["covered"] for row in report.rows()] == [1, 0, 1]
    assert [row["rep"] for row in report.rows()] == [0, 2, 3]
    assert report.summary()["failures"] == {"1": "EmptyDesign: No rows"}


class TestManifest:
    def test_digest(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_bytes(b"abc")

        assert file_digest(path) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )

    def test_reproducible_drops_timestamps(self):
        manifest = RunManifest(command="dml", version=__version__, seed=1, arguments={"band": 100})

        finished = manifest.finish()

        assert finished.finished_at is not None
        assert "started_at" not in finished.reproducible()
        assert finished.reproducible() == manifest.reproducible()
        assert MANIFEST_NAME == "manifest.json"

    def test_json_round_trip(self):
        manifest = RunManifest(
            command="replicate",
            version="0.1.0",
            seed=3,
            inputs={"data.csv": "00"},
            config={"panel": "lat_lon"},
        )

        assert RunManifest.model_validate_json(manifest.model_dump_json()) == manifest
