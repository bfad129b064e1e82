"""Unit tests for the nuisance learners."""

import numpy as np
import pytest
from pydantic import ValidationError

from mitadml.core.exceptions import (
    ConstantTreatment,
    DimensionMismatch,
    NonFiniteLoss,
    SeparationDetected,
    SingularDesign,
)
from mitadml.core.learners import (
    evaluate_loss,
    fit,
    fit_linear,
    fit_logistic,
    fit_mean,
    fit_mlp,
    grad_check,
    predict,
)
from mitadml.models.learner import Activation, LearnerKind, LearnerSpec, TrainedModel


@pytest.fixture
def rng():
    return np.random.default_rng(5)


class TestLinear:
    def test_exact_fit(self):
        model = fit_linear([[1.0], [2.0], [3.0]], [2.0, 4.0, 6.0])

        assert model.parameters["coef"][0] == pytest.approx(2.0)
        assert model.parameters["intercept"][0] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(predict(model, [[1.0], [2.0], [3.0]]), [2.0, 4.0, 6.0])

    def test_duplicated_column_is_singular(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [5.0, 5.0]])

        with pytest.raises(SingularDesign):
            fit_linear(x, [1.0, 2.0, 3.0, 4.0])

    def test_ridge_fixes_duplicated_column(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [5.0, 5.0]])

        model = fit_linear(x, [1.0, 2.0, 3.0, 4.0], lam=0.1)

        assert model.parameters["coef"][0] == pytest.approx(model.parameters["coef"][1])

    def test_full_shrinkage(self):
        model = fit_linear([[1.0], [2.0], [3.0]], [2.0, 4.0, 9.0], lam=1e12)

        assert model.parameters["coef"][0] == pytest.approx(0.0, abs=1e-9)
        assert model.parameters["intercept"][0] == pytest.approx(5.0)

    def test_matches_lstsq(self, rng):
        x = rng.normal(size=(50, 3))
        y = x @ [1.0, -2.0, 0.5] + 3.0 + rng.normal(size=50)

        model = fit_linear(x, y)
        beta, *_ = np.linalg.lstsq(np.column_stack([np.ones(50), x]), y, rcond=None)

        np.testing.assert_allclose(model.parameters["coef"], beta[1:], rtol=1e-8)
        assert model.parameters["intercept"][0] == pytest.approx(beta[0])


class TestLogistic:
    def test_intercept_only_gives_sample_share(self):
        d = np.array([1.0, 1.0, 1.0, 0.0] * 5)

        model = fit_logistic(np.empty((20, 0)), d)

        np.testing.assert_allclose(predict(model, np.empty((3, 0))), 0.75)

    def test_separated_data_without_penalty(self):
        x = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
        d = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])

        with pytest.raises(SeparationDetected):
            fit_logistic(x, d)

    def test_separated_data_with_penalty(self):
        x = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
        d = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])

        model = fit_logistic(x, d, lam=0.1)

        assert np.all(np.isfinite(model.parameters["coef"]))
        assert predict(model, [[2.0]])[0] > 0.5 > predict(model, [[-2.0]])[0]

    def test_constant_labels(self):
        with pytest.raises(ConstantTreatment):
            fit_logistic([[0.0], [1.0]], [1.0, 1.0])

    def test_recovers_coefficients(self, rng):
        x = rng.normal(size=(4000, 2))
        d = (rng.random(4000) < 1 / (1 + np.exp(-(0.5 + x @ [1.0, -1.0])))).astype(float)

        model = fit_logistic(x, d)

        np.testing.assert_allclose(model.parameters["coef"], [1.0, -1.0], atol=0.15)
        assert model.parameters["intercept"][0] == pytest.approx(0.5, abs=0.15)

    def test_score_equations_hold_at_the_fit(self, rng):
        """Test that the unpenalized gradient max-norm is below the Newton tolerance."""
        x = rng.normal(size=(4000, 2))
        d = (rng.random(4000) < 1 / (1 + np.exp(-(0.5 + x @ [1.0, -1.0])))).astype(float)

        model = fit_logistic(x, d)

        design = np.column_stack([np.ones(len(d)), x])
        gradient = design.T @ (d - predict(model, x))
        assert np.max(np.abs(gradient)) < 1e-7


class TestMlp:
    def test_linear_network_matches_least_squares(self, rng):
        """Test that a network without hidden layers recovers a linear fit."""
        x = rng.normal(size=(1000, 1))
        y = 3.0 * x[:, 0]
        spec = LearnerSpec(kind=LearnerKind.MLP_REGRESSOR, hidden_layers=[], seed=3)

        model = fit_mlp(x, y, spec)
        grid = np.linspace(-1, 1, 5).reshape(-1, 1)

        slope = (predict(model, [[1.0]]) - predict(model, [[0.0]]))[0]
        assert slope == pytest.approx(3.0, abs=1e-2)
        np.testing.assert_allclose(
            predict(model, grid), predict(fit_linear(x, y), grid), atol=1e-2
        )

    def test_classifier_learns_a_threshold(self, rng):
        x = rng.normal(size=(500, 2))
        d = (x[:, 0] > 0).astype(float)
        spec = LearnerSpec(kind=LearnerKind.MLP_CLASSIFIER, hidden_layers=[8], seed=4)

        model = fit_mlp(x, d, spec)

        test = rng.normal(size=(400, 2))
        test = test[np.abs(test[:, 0]) > 0.2]
        accuracy = np.mean((predict(model, test) > 0.5) == (test[:, 0] > 0))
        assert accuracy == 1.0

    def test_training_is_reproducible(self, rng):
        x = rng.normal(size=(120, 3))
        y = np.sin(x[:, 0]) + x[:, 1]
        spec = LearnerSpec(hidden_layers=[6, 4], activation=Activation.TANH, max_epochs=30, seed=9)

        first, second = fit_mlp(x, y, spec), fit_mlp(x, y, spec)

        for name, values in first.parameters.items():
            np.testing.assert_array_equal(values, second.parameters[name])
        assert first.training_log == second.training_log

    def test_early_stopping_keeps_best_checkpoint(self, rng):
        x = rng.normal(size=(200, 4))
        y = x[:, 0] + rng.normal(scale=2.0, size=200)
        spec = LearnerSpec(hidden_layers=[32], learning_rate=0.05, early_stop_patience=3, seed=2)

        model = fit_mlp(x, y, spec)

        log = model.validation_log
        assert len(log) < spec.max_epochs
        assert model.best_epoch == int(np.argmin(log))
        assert len(log) == model.best_epoch + 1 + spec.early_stop_patience
        assert min(log[model.best_epoch + 1 :]) >= log[model.best_epoch]

        # training is deterministic, so stopping at the best epoch reproduces its weights
        truncated = fit_mlp(x, y, spec.model_copy(update={"max_epochs": model.best_epoch + 1}))
        np.testing.assert_array_equal(predict(model, x), predict(truncated, x))
        restored = TrainedModel.from_bytes(model.to_bytes())
        assert restored.best_epoch == model.best_epoch

    def test_divergence_reports_epoch(self, rng):
        x = rng.normal(size=(64, 2))
        y = rng.normal(size=64)
        spec = LearnerSpec(hidden_layers=[4], learning_rate=1e200, max_epochs=5, seed=1)

        with pytest.raises(NonFiniteLoss) as excinfo:
            fit_mlp(x, y, spec)

        assert excinfo.value.epoch == 0

    def test_rejects_non_network_kind(self, rng):
        with pytest.raises(ValueError):
            fit_mlp(rng.normal(size=(10, 1)), np.zeros(10), LearnerSpec(kind=LearnerKind.LOGISTIC))


class TestPredict:
    def test_dimension_mismatch(self):
        model = fit_linear([[1.0, 0.0], [2.0, 1.0], [3.0, 5.0]], [1.0, 2.0, 3.0])

        with pytest.raises(DimensionMismatch):
            predict(model, [[1.0, 2.0, 3.0]])

    def test_zero_rows(self):
        model = fit_linear([[1.0], [2.0], [3.0]], [1.0, 2.0, 3.0])

        assert predict(model, np.empty((0, 1))).shape == (0,)

    def test_classifier_probabilities_are_interior(self, rng):
        x = rng.normal(size=(200, 2))
        d = (x[:, 0] > 0).astype(float)
        spec = LearnerSpec(kind=LearnerKind.MLP_CLASSIFIER, hidden_layers=[4], max_epochs=20)

        prob = predict(fit(spec, x, d), x * 100)

        assert np.all((prob > 0) & (prob < 1))

    def test_mean_learner(self):
        model = fit_mean(np.zeros((4, 2)), [0.0, 1.0, 1.0, 1.0])

        np.testing.assert_allclose(predict(model, np.ones((2, 2))), 0.75)
        assert evaluate_loss(model, np.zeros((4, 2)), [0.0, 1.0, 1.0, 1.0]) == pytest.approx(
            -(0.25 * np.log(0.25) + 0.75 * np.log(0.75))
        )

    def test_dispatcher(self):
        spec = LearnerSpec(kind=LearnerKind.LINEAR_RIDGE, ridge_lambda=0.0)

        model = fit(spec, [[1.0], [2.0], [3.0]], [2.0, 4.0, 6.0])

        assert model.spec.kind is LearnerKind.LINEAR_RIDGE
        assert evaluate_loss(model, [[1.0]], [2.0]) == pytest.approx(0.0, abs=1e-20)


class TestGradCheck:
    def _data(self, rng, classifier=False):
        x = rng.normal(size=(20, 5))
        y = x @ rng.normal(size=5)
        return x, (y > 0).astype(float) if classifier else y

    def test_tanh_regressor(self, rng):
        x, y = self._data(rng)
        spec = LearnerSpec(hidden_layers=[4], activation=Activation.TANH)

        assert grad_check(spec, x, y) < 1e-6

    def test_relu_classifier(self, rng):
        x, y = self._data(rng, classifier=True)
        spec = LearnerSpec(
            kind=LearnerKind.MLP_CLASSIFIER, hidden_layers=[3, 3], activation=Activation.RELU
        )

        assert grad_check(spec, x, y) < 1e-4

    @pytest.mark.parametrize("kind", [LearnerKind.MLP_REGRESSOR, LearnerKind.MLP_CLASSIFIER])
    def test_no_hidden_layers(self, rng, kind):
        x, y = self._data(rng, classifier=kind is LearnerKind.MLP_CLASSIFIER)

        assert grad_check(LearnerSpec(kind=kind, hidden_layers=[]), x, y) < 1e-8

    def test_with_weight_penalty(self, rng):
        x, y = self._data(rng)
        spec = LearnerSpec(hidden_layers=[5], activation=Activation.TANH, ridge_lambda=0.5)

        assert grad_check(spec, x, y) < 1e-6


class TestSpecAndBlob:
    def test_hidden_layers_must_be_positive(self):
        with pytest.raises(ValidationError):
            LearnerSpec(hidden_layers=[4, 0])

    def test_spec_json_round_trip(self):
        spec = LearnerSpec(kind=LearnerKind.MLP_CLASSIFIER, hidden_layers=[16, 8], seed=1)

        assert LearnerSpec.model_validate_json(spec.model_dump_json()) == spec

    def test_blob_restores_predictions(self, rng):
        x = rng.normal(size=(80, 2))
        y = x[:, 0] - x[:, 1]
        model = fit_mlp(x, y, LearnerSpec(hidden_layers=[5], max_epochs=10))

        blob = model.to_bytes()
        restored = TrainedModel.from_bytes(blob)

        assert blob[:5] == b"ODML1"
        np.testing.assert_array_equal(predict(restored, x), predict(model, x))

    def test_blob_with_bad_magic(self):
        with pytest.raises(ValueError):
            TrainedModel.from_bytes(b"XXXXX" + b"\x00" * 8)
