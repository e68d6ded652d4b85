import logging
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from fusion_prognostics.clustering.operations import align_labels, per_mode_accuracy
from fusion_prognostics.exceptions import DataError
from fusion_prognostics.fda.fpca import reconstruct
from fusion_prognostics.pipeline.model import OfflineModel, RegressionModel
from fusion_prognostics.pipeline.online import OnlinePredictor
from fusion_prognostics.signals.model import SignalDataset

logger = logging.getLogger("fusion_prognostics.pipeline")

LIFE_PERCENTILES = (10, 20, 30, 40, 50, 60, 70, 80, 90)
COHORT_THRESHOLDS = (100, 80, 60, 40, 20)
RUL_INTERVALS = ((0, 25), (26, 50), (51, 75), (76, 100), (101, 125), (126, 150))


def relative_error(estimated_life, actual_life):
    """|estimated - actual| / actual in percent."""
    estimated = np.asarray(estimated_life, dtype=float)
    actual = np.asarray(actual_life, dtype=float)
    if np.any(actual <= 0):
        raise DataError("Actual life must be positive")
    error = np.abs(estimated - actual) / actual * 100
    return float(error) if error.ndim == 0 else error


def predict_at_percentiles(
    predictor: OnlinePredictor,
    test: SignalDataset,
    percentiles: Iterable[int] = LIFE_PERCENTILES,
) -> pd.DataFrame:
    """Predictions for every test unit observed up to each percentile of its true life."""
    rows = []
    for percentile in percentiles:
        for unit in test.systems:
            if unit.ttf is None:
                raise DataError(f"Test unit {unit.id} has no true life", system_id=unit.id)
            t_star = unit.ttf * percentile / 100
            prediction = predictor.predict(unit, t_star)
            rows.append(
                prediction.record()
                | {
                    "percentile": percentile,
                    "actual_life": unit.ttf,
                    "relative_error": relative_error(prediction.estimated_life, unit.ttf),
                }
            )
        logger.info(f"Predicted {test.n_systems} units at {percentile}% of their lives")
    return pd.DataFrame(rows)


def error_summary(predictions: pd.DataFrame, by: Sequence[str] = ("percentile",)) -> pd.DataFrame:
    """Median, quartiles and mean of the relative error per group."""
    grouped = predictions.groupby(list(by), sort=True)["relative_error"]
    summary = grouped.agg(
        n="count",
        mean="mean",
        q1=lambda e: e.quantile(0.25),
        median="median",
        q3=lambda e: e.quantile(0.75),
    )
    return summary.reset_index()


def evaluate_sim(predictions_by_regime: dict) -> pd.DataFrame:
    """Error summary per SNR regime and life percentile."""
    frames = [frame.assign(regime=regime) for regime, frame in predictions_by_regime.items()]
    if not frames:
        raise DataError("No predictions to evaluate")
    return error_summary(pd.concat(frames, ignore_index=True), by=("regime", "percentile"))


def clustering_accuracy(offline: OfflineModel, true_modes: np.ndarray) -> pd.DataFrame:
    """Aligned overall and per-mode accuracy of the offline hard labels."""
    _, overall = align_labels(offline.labels, true_modes, offline.K)
    per_mode = per_mode_accuracy(offline.labels, true_modes, offline.K)
    rows = [{"mode": k, "accuracy": float(per_mode[k])} for k in range(offline.K)]
    rows.append({"mode": "all", "accuracy": overall})
    return pd.DataFrame(rows)


def cmapss_cohort_errors(predictions: pd.DataFrame) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Relative errors of the C-MAPSS test units grouped by true remaining life: means over units with
    RUL at most each threshold, and median and quartiles over fixed RUL intervals.
    `predictions` needs the columns true_rul and relative_error.
    """
    missing = {"true_rul", "relative_error"} - set(predictions.columns)
    if missing:
        raise DataError(f"Predictions lack the columns {sorted(missing)}")

    cohorts = []
    for threshold in COHORT_THRESHOLDS:
        errors = predictions.loc[predictions["true_rul"] <= threshold, "relative_error"]
        cohorts.append({"max_rul": threshold, "n": int(errors.size), "mean_error": _nan_if_empty(errors.mean())})

    intervals = []
    for low, high in RUL_INTERVALS:
        errors = predictions.loc[predictions["true_rul"].between(low, high), "relative_error"]
        intervals.append(
            {
                "rul_low": low,
                "rul_high": high,
                "n": int(errors.size),
                "q1": _nan_if_empty(errors.quantile(0.25)),
                "median": _nan_if_empty(errors.median()),
                "q3": _nan_if_empty(errors.quantile(0.75)),
            }
        )
    return pd.DataFrame(cohorts), pd.DataFrame(intervals)


def coefficient_function(model: RegressionModel) -> np.ndarray:
    """
    Coefficient function of the fitted regression on the raw curves, one row per sensor of the
    mode basis: sum_h (c_h / sd_h) psi_h(t).
    """
    basis = model.mode_basis.basis
    sds = model.mode_basis.scores.standardization.sds[: model.n_components]
    curve = reconstruct(basis, model.coefficients / sds, model.n_components)[0] - basis.mean
    return curve.reshape(len(model.mode_basis.sensors), basis.grid.size)


def _nan_if_empty(value) -> float:
    return float(value) if pd.notna(value) else float("nan")
