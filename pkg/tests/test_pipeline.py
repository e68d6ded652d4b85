import math

import numpy as np
import pandas as pd
import pytest

from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.mixture.model import EmConfig, PenaltyConfig
from fusion_prognostics.pipeline.evaluation import (
    cmapss_cohort_errors,
    coefficient_function,
    error_summary,
    evaluate_sim,
    predict_at_percentiles,
    relative_error,
)
from fusion_prognostics.pipeline.model import CvConfig, RegressionModel
from fusion_prognostics.pipeline.offline import cross_validate, held_out_features, offline_fit
from fusion_prognostics.pipeline.online import OnlinePredictor, online_prepare, predict_rul
from fusion_prognostics.pipeline.regression import fit_weighted_lasso, lambda_path, select_lambda_loocv
from fusion_prognostics.signals.operations import standardize_ln_values
from fusion_prognostics.simulation.generator import gen_dataset
from fusion_prognostics.simulation.model import SimConfig


@pytest.fixture(scope="module")
def offline(small_study):
    return offline_fit(
        small_study.offline_train,
        K=2,
        penalty=PenaltyConfig(),
        em=EmConfig(max_iterations=20),
        fve=0.5,
        init_labels=small_study.train_modes,
    )


class TestWeightedLasso:
    def test_unpenalized_with_equal_weights_is_least_squares(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(30, 3))
        y = 1.0 + z @ np.array([0.5, -1.0, 2.0]) + 0.1 * rng.normal(size=30)
        expected = np.linalg.lstsq(np.column_stack([np.ones(30), z]), y, rcond=None)[0]

        fit = fit_weighted_lasso(z, y, np.ones(30), 0.0)

        assert fit.intercept == pytest.approx(expected[0], abs=1e-10)
        assert np.allclose(fit.coefficients, expected[1:], atol=1e-10)

    def test_orthonormal_design_soft_thresholds(self):
        rng = np.random.default_rng(1)
        raw = rng.normal(size=(20, 3))
        z, _ = np.linalg.qr(raw - raw.mean(axis=0))
        y = z @ np.array([2.0, -0.3, 0.8]) + 0.05 * rng.normal(size=20)
        ols = z.T @ (y - y.mean())
        lam = 1.0

        fit = fit_weighted_lasso(z, y, np.ones(20), lam)

        expected = np.sign(ols) * np.maximum(np.abs(ols) - lam / 2, 0.0)
        assert np.allclose(fit.coefficients, expected, atol=1e-8)

    def test_weights_scale_out(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(15, 2))
        y = z[:, 0] + 0.1 * rng.normal(size=15)
        weights = rng.uniform(0.5, 2.0, size=15)

        fit = fit_weighted_lasso(z, y, weights, 0.0)
        scaled = fit_weighted_lasso(z, y, 10 * weights, 0.0)

        assert np.allclose(fit.coefficients, scaled.coefficients, atol=1e-10)

    def test_path_starts_at_the_all_zero_penalty(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(25, 4))
        y = z[:, 1] - z[:, 2] + 0.2 * rng.normal(size=25)
        weights = rng.uniform(0.5, 1.5, size=25)

        lambdas = lambda_path(z, y, weights, length=10)

        assert lambdas.size == 10
        assert np.all(np.diff(lambdas) < 0)
        assert np.allclose(fit_weighted_lasso(z, y, weights, lambdas[0]).coefficients, 0.0, atol=1e-10)
        assert np.any(fit_weighted_lasso(z, y, weights, lambdas[-1]).coefficients != 0)

    def test_leave_one_out_picks_a_path_member(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(12, 2))
        y = z[:, 0] + 0.3 * rng.normal(size=12)
        weights = np.ones(12)
        lambdas = lambda_path(z, y, weights, length=8)

        best, errors = select_lambda_loocv(z, y, weights, lambdas)

        assert best in lambdas
        assert errors.shape == (8,)
        assert np.all(errors >= 0)

    def test_leave_one_out_needs_three_units(self):
        with pytest.raises(InsufficientData):
            select_lambda_loocv(np.ones((2, 1)), np.array([0.0, 1.0]), np.ones(2), np.array([0.1]))

    def test_weights_must_be_positive(self):
        with pytest.raises(DataError):
            fit_weighted_lasso(np.ones((3, 1)), np.zeros(3), np.array([1.0, 0.0, 1.0]), 0.0)


class TestPredictRul:
    def setup_method(self):
        self.lives = np.array([0.4, 0.6, 0.9])
        self.ttf = standardize_ln_values(self.lives)

    def model(self, intercept=0.0, coefficients=(0.5,)) -> RegressionModel:
        return RegressionModel(
            mode=1,
            mode_basis=None,
            n_components=len(coefficients),
            intercept=intercept,
            coefficients=np.array(coefficients),
            weights=np.ones(3),
            lasso_lambda=0.0,
            ttf=self.ttf,
        )

    def test_zero_score_predicts_the_geometric_mean_life(self):
        prediction = predict_rul(self.model(), 0.2, np.zeros(1), unit_id="a")

        assert prediction.rul == pytest.approx(math.exp(self.ttf.ln_mean) - 0.2)
        assert prediction.mode == 1
        assert not prediction.clamped

    def test_estimated_life_does_not_depend_on_t_star(self):
        early = predict_rul(self.model(), 0.1, np.array([0.3]))
        late = predict_rul(self.model(), 0.25, np.array([0.3]))

        assert early.rul - late.rul == pytest.approx(0.15)
        assert early.estimated_life == pytest.approx(late.estimated_life)

    def test_remaining_life_is_clamped_at_zero(self):
        prediction = predict_rul(self.model(), 5.0, np.zeros(1))

        assert prediction.rul == 0.0
        assert prediction.clamped

    def test_standardized_response_maps_back_to_the_life(self):
        for y, life in zip(self.ttf.y, self.lives):
            prediction = predict_rul(self.model(intercept=float(y), coefficients=(0.0,)), 0.1, np.zeros(1))

            assert prediction.rul == pytest.approx(life - 0.1, rel=1e-10)

    def test_extra_scores_are_ignored(self):
        prediction = predict_rul(self.model(), 0.2, np.array([0.0, 100.0]))

        assert prediction.rul == pytest.approx(math.exp(self.ttf.ln_mean) - 0.2)


class TestEvaluation:
    def test_relative_error(self):
        assert relative_error(0.55, 0.61) == pytest.approx(9.8360656, abs=1e-6)
        assert np.allclose(relative_error([1.0, 3.0], [2.0, 2.0]), [50.0, 50.0])

    def test_actual_life_must_be_positive(self):
        with pytest.raises(DataError):
            relative_error(1.0, 0.0)

    def test_error_summary(self):
        predictions = pd.DataFrame({"percentile": [10, 10, 10, 50, 50], "relative_error": [1.0, 2.0, 3.0, 4.0, 8.0]})

        summary = error_summary(predictions)

        assert summary["percentile"].tolist() == [10, 50]
        assert summary["n"].tolist() == [3, 2]
        assert summary["median"].tolist() == [2.0, 6.0]
        assert summary["mean"].tolist() == [2.0, 6.0]

    def test_evaluate_sim(self):
        frame = pd.DataFrame({"percentile": [10, 50], "relative_error": [1.0, 2.0]})

        summary = evaluate_sim({"snr_2_5": frame, "snr_5_8": frame})

        assert len(summary) == 4
        assert set(summary["regime"]) == {"snr_2_5", "snr_5_8"}

    def test_evaluate_nothing(self):
        with pytest.raises(DataError):
            evaluate_sim({})

    def test_cmapss_cohorts(self):
        predictions = pd.DataFrame(
            {"true_rul": [10, 30, 90, 120, 140], "relative_error": [1.0, 2.0, 3.0, 4.0, 5.0]}
        )

        cohorts, intervals = cmapss_cohort_errors(predictions)

        assert cohorts["max_rul"].tolist() == [100, 80, 60, 40, 20]
        assert cohorts["n"].tolist() == [3, 2, 2, 2, 1]
        assert cohorts["mean_error"].tolist() == [2.0, 1.5, 1.5, 1.5, 1.0]
        assert intervals["n"].tolist() == [1, 1, 0, 1, 1, 1]
        assert intervals["median"].iloc[1] == 2.0
        assert np.isnan(intervals["median"].iloc[2])

    def test_cmapss_cohorts_need_true_rul(self):
        with pytest.raises(DataError):
            cmapss_cohort_errors(pd.DataFrame({"relative_error": [1.0]}))


class TestOfflineOnline:
    def test_offline_fit(self, small_study, offline):
        assert offline.K == 2
        assert offline.labels.shape == (small_study.offline_train.n_systems,)
        assert offline.union_sensors
        trace = offline.fit.objective_trace
        assert np.all(np.diff(trace) <= 1e-7 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_held_out_features_have_the_training_columns(self, small_study, offline):
        features = held_out_features(offline, small_study.test)

        assert features.x.shape == (small_study.test.n_systems, offline.features.x.shape[1])
        assert np.all(np.isfinite(features.x))

    def test_predictions_at_half_life(self, small_study, offline):
        predictor = OnlinePredictor(small_study.train, offline)

        predictions = predict_at_percentiles(predictor, small_study.test, percentiles=(50,))

        assert len(predictions) == small_study.test.n_systems
        assert np.all(np.isfinite(predictions["rul"]))
        assert np.all(predictions["rul"] >= 0)
        assert set(predictions["mode"]) <= {0, 1}
        assert np.all(predictions["relative_error"] >= 0)

    def test_contexts_are_shared_by_units_on_the_same_prefix(self, small_study, offline):
        predictor = OnlinePredictor(small_study.train, offline)

        assert predictor.context(0.2) is predictor.context(0.2 + 1e-12)

    def test_survivors_shrink_as_t_star_grows(self, small_study, offline):
        early = online_prepare(small_study.train, offline, 0.2)
        later = online_prepare(small_study.train, offline, 0.4)

        assert later.n_surviving <= early.n_surviving
        assert later.n_points > early.n_points

    def test_nobody_survives_the_last_failure(self, small_study, offline):
        with pytest.raises(InsufficientData):
            online_prepare(small_study.train, offline, float(small_study.train.ttf.max()))

    def test_coefficient_function_has_one_curve_per_sensor(self, small_study, offline):
        predictor = OnlinePredictor(small_study.train, offline)
        ctx = predictor.context(0.3)
        model = predictor.regression(ctx, 0)

        curves = coefficient_function(model)

        assert curves.shape == (len(model.mode_basis.sensors), ctx.n_points)
        assert np.all(np.isfinite(curves))

    def test_single_point_grid_is_chosen(self, small_study):
        result = cross_validate(
            small_study.offline_train,
            K=2,
            cv=CvConfig(folds=3, lambda_grid=(0.0,), alpha_grid=(1.0,)),
            em=EmConfig(max_iterations=10),
            fve=0.5,
            init_labels=small_study.train_modes,
        )

        assert result.best_lambda == 0.0
        assert result.best_alpha == 1.0
        assert len(result.table) == 1


def test_errors_shrink_as_units_near_failure():
    study = gen_dataset(
        SimConfig(
            n_sensors=3,
            informative=((1, 2), (2, 3)),
            n_per_mode=40,
            train_per_mode=30,
            grid_points=100,
            snr_informative=(8.0, 11.0),
            snr_noninformative=(8.0, 11.0),
            seed=5,
        )
    )
    model = offline_fit(
        study.offline_train,
        K=2,
        penalty=PenaltyConfig(lambda_=0.0),
        em=EmConfig(max_iterations=30),
        fve=0.5,
        init_labels=study.train_modes,
    )
    predictor = OnlinePredictor(study.train, model)

    summary = error_summary(predict_at_percentiles(predictor, study.test, percentiles=(20, 90)))

    median = summary.set_index("percentile")["median"]
    assert median[90] < median[20]
