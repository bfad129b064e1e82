"""Unit tests for the synthetic data generator and the Monte Carlo harness."""

import numpy as np
import pytest
from scipy.special import logit

from mitadml.core.exceptions import ConfigError, McUnstable
from mitadml.core.simulate import (
    MOMENTS,
    correlation_matrix,
    count_distribution,
    diff_in_means,
    ground_truth,
    monte_carlo,
    run_estimator,
    simulate,
    treatment_effect,
)
from mitadml.models.dataset import ROLES
from mitadml.models.simulation import (
    DgpConfig,
    EffectMode,
    EstimatorKind,
    EstimatorSpec,
    simulation_design,
)


def test_copula_correlation():
    corr = correlation_matrix(DgpConfig(potosi_boundary_corr=0.3))

    np.testing.assert_array_equal(corr, corr.T)
    assert np.sum(corr != np.eye(len(corr))) == 2
    assert np.max(corr[~np.eye(len(corr), dtype=bool)]) == 0.3


@pytest.mark.parametrize("role,floor", [("n_infants", 0), ("n_children", 0), ("n_adults", 1)])
def test_count_distribution_matches_moments(role, floor):
    mean, sd = MOMENTS[role]
    p = count_distribution(mean, sd, floor)
    support = np.arange(floor, floor + len(p))

    fitted_mean = p @ support
    assert p.sum() == pytest.approx(1.0)
    assert fitted_mean == pytest.approx(mean, abs=1e-4)
    assert np.sqrt(p @ (support - fitted_mean) ** 2) == pytest.approx(sd, abs=1e-4)


class TestSimulate:
    def test_schema(self, synthetic):
        ds, _ = synthetic

        assert list(ds.frame.columns) == list(ROLES)
        assert ds.n == 600
        assert ds.n_clusters <= 71
        assert set(np.unique(ds.frame["mita_dummy"])) == {0.0, 1.0}

    def test_counts_and_segments(self, synthetic):
        frame = synthetic[0].frame

        for role in ("n_infants", "n_children", "n_adults"):
            values = frame[role].to_numpy()
            assert np.all(values == np.round(values))
        assert frame["n_adults"].min() >= 1
        assert frame["n_infants"].min() >= 0
        assert (frame[["seg1", "seg2", "seg3"]].sum(axis=1) <= 1).all()
        assert (frame["dist_boundary"] > 0).all()

    def test_deterministic(self):
        first, _ = simulate(DgpConfig(n=300, seed=5))
        second, _ = simulate(DgpConfig(n=300, seed=5))
        other, _ = simulate(DgpConfig(n=300, seed=6))

        assert first.equals(second)
        assert not first.equals(other)

    def test_calibrated_moments(self):
        ds, truth = simulate(DgpConfig(n=20000, seed=9))
        frame = ds.frame

        for role in ("longitude", "latitude", "dist_potosi", "dist_boundary", "elevation", "slope"):
            mean, sd = MOMENTS[role]
            assert abs(frame[role].mean() - mean) < 0.05 * sd
            assert frame[role].std() == pytest.approx(sd, rel=0.05)
        for role in ("n_infants", "n_children", "n_adults"):
            assert frame[role].mean() == pytest.approx(MOMENTS[role][0], abs=0.05)
        assert frame["mita_dummy"].mean() == pytest.approx(truth.treated_share, abs=0.02)
        assert frame["log_consumption"].mean() == pytest.approx(
            MOMENTS["log_consumption"][0], abs=0.05
        )

    def test_noiseless_linear_outcome_is_recovered_by_ols(self):
        ds, _ = simulate(DgpConfig(n=800, seed=4, noise_sd=0.0))

        theta, _ = run_estimator(ds, EstimatorSpec(kind=EstimatorKind.OLS), seed=0)

        assert theta == pytest.approx(-0.3, abs=1e-8)

    def test_no_selection_makes_treatment_independent_of_distances(self):
        frame = simulate(DgpConfig(n=100000, seed=13, selection_strength=0.0))[0].frame
        d = frame["mita_dummy"].to_numpy()

        for role in ("dist_potosi", "dist_boundary", "elevation"):
            assert abs(np.corrcoef(d, frame[role].to_numpy())[0, 1]) < 0.02


class TestGroundTruth:
    def test_independent_of_sample(self):
        assert ground_truth(DgpConfig(n=500, seed=1)) == ground_truth(DgpConfig(n=9000, seed=2))

    def test_constant_effect(self):
        truth = ground_truth(DgpConfig(true_theta=-0.2))

        assert truth.ate == truth.atte == truth.plr_limit == -0.2
        assert truth.treated_share == pytest.approx(0.752368, abs=1e-8)

    def test_no_selection_intercept(self):
        truth = ground_truth(DgpConfig(selection_strength=0.0))

        assert truth.intercept == pytest.approx(logit(0.752368), abs=1e-8)

    def test_linear_heterogeneity(self):
        truth = ground_truth(DgpConfig(effect_mode=EffectMode.LINEAR, effect_slope=1.0))

        # treated households sit nearer Potosi, where the effect is smaller
        assert truth.ate == -0.3
        assert truth.atte < truth.ate
        assert truth.plr_limit != truth.ate

    def test_step_heterogeneity(self):
        truth = ground_truth(DgpConfig(effect_mode=EffectMode.STEP))

        assert truth.ate == pytest.approx(-0.15)
        assert truth.atte < truth.ate

    def test_for_estimand(self):
        truth = ground_truth(DgpConfig())

        assert truth.for_estimand("ate") == truth.ate
        assert EstimatorKind.IRM_ATTE.truth_key == "atte"
        assert EstimatorKind.OLS.truth_key == "plr_limit"
        assert EstimatorKind.DIFF_IN_MEANS.truth_key == "ate"


def test_treatment_effect_modes():
    dist = np.array([MOMENTS["dist_potosi"][0] - 1.0, MOMENTS["dist_potosi"][0] + 1.0])
    sd = MOMENTS["dist_potosi"][1]

    constant = treatment_effect(DgpConfig(), dist)
    linear = treatment_effect(DgpConfig(effect_mode=EffectMode.LINEAR, effect_slope=sd), dist)
    step = treatment_effect(DgpConfig(effect_mode=EffectMode.STEP), dist)

    np.testing.assert_allclose(constant, [-0.3, -0.3])
    np.testing.assert_allclose(linear, [-1.3, 0.7])
    np.testing.assert_allclose(step, [-0.3, 0.0])


def test_diff_in_means():
    theta, se = diff_in_means(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.0, 0.0, 1.0, 1.0]))

    assert theta == 2.0
    assert se == pytest.approx(np.sqrt(0.5))


class TestMonteCarlo:
    def test_needs_two_replications(self):
        with pytest.raises(ConfigError):
            monte_carlo(DgpConfig(n=200), reps=1)

    def test_report(self):
        cfg = DgpConfig(n=400, seed=3)
        estimator = EstimatorSpec(kind=EstimatorKind.OLS)

        report = monte_carlo(cfg, estimator, reps=6)

        assert report.reps == 6
        assert report.rep_ids == list(range(6))
        assert report.truth == -0.3
        errors = np.array(report.estimates) - report.truth
        assert report.mean_bias == pytest.approx(errors.mean())
        assert report.rmse**2 == pytest.approx(report.mean_bias**2 + errors.var())
        assert [row["rep"] for row in report.rows()] == list(range(6))
        assert report.coverage95 == pytest.approx(np.mean([r["covered"] for r in report.rows()]))
        assert "estimates" not in report.summary()

    def test_thread_count_does_not_change_results(self):
        cfg = DgpConfig(n=300, seed=8)
        estimator = EstimatorSpec(kind=EstimatorKind.DIFF_IN_MEANS)

        serial = monte_carlo(cfg, estimator, reps=5, threads=1)
        parallel = monte_carlo(cfg, estimator, reps=5, threads=3)

        assert serial.estimates == parallel.estimates

    def test_diff_in_means_is_unbiased_without_selection(self):
        cfg = DgpConfig(n=500, seed=14, selection_strength=0.0)

        report = monte_carlo(cfg, EstimatorSpec(kind=EstimatorKind.DIFF_IN_MEANS), reps=40)

        assert report.truth == -0.3
        assert report.mc_se > 0
        assert abs(report.mean_bias) < 2 * report.mc_se

    def test_dml_replications(self):
        report = monte_carlo(DgpConfig(n=500, seed=12), EstimatorSpec(), reps=3)

        assert report.estimator is EstimatorKind.PLR
        assert all(se > 0 for se in report.ses)

    def test_failing_estimator(self):
        design = simulation_design().model_copy(update={"band_km": 0.001})
        estimator = EstimatorSpec(kind=EstimatorKind.OLS, design=design)

        with pytest.raises(McUnstable) as exc:
            monte_carlo(DgpConfig(n=200), estimator, reps=4)

        assert sorted(exc.value.failures) == [0, 1, 2, 3]
        assert "EmptyDesign" in exc.value.failures[0]
