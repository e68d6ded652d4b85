import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold

from fusion_prognostics.clustering.model import KmeansConfig, SensorClustering
from fusion_prognostics.clustering.operations import assign_sensors, cluster_sensors
from fusion_prognostics.exceptions import DataError, FusionError, InsufficientData
from fusion_prognostics.fda.cafpca import fit_cafpca, transform_cafpca
from fusion_prognostics.fda.model import ClusterBases, FeatureMatrix
from fusion_prognostics.mixture.em import fit_em, predict_mean
from fusion_prognostics.mixture.model import EmConfig, FitResult, PenaltyConfig
from fusion_prognostics.pipeline.model import CvConfig, CvResult, OfflineModel
from fusion_prognostics.signals.model import SignalDataset, StandardizedTtf
from fusion_prognostics.signals.operations import restrict, standardize_ln_ttf

logger = logging.getLogger("fusion_prognostics.pipeline")


@dataclass(frozen=True)
class _Features:
    sensor_clustering: SensorClustering
    cluster_bases: ClusterBases
    features: FeatureMatrix
    ttf: StandardizedTtf


def offline_fit(
    dataset: SignalDataset,
    K: int,
    penalty: PenaltyConfig,
    em: Optional[EmConfig] = None,
    fve: float = 0.95,
    kmeans: Optional[KmeansConfig] = None,
    init_labels: Optional[np.ndarray] = None,
) -> OfflineModel:
    """
    Sensor-wise clustering, CA-FPCA features and the penalized mixture regression of standardized
    ln TTF on them. `dataset` is the training set truncated to its shortest life.
    """
    em = em or EmConfig()
    prepared = _prepare_features(dataset, K, fve, kmeans or KmeansConfig(), em.seed)
    fit = fit_em(prepared.features, prepared.ttf.y, K, penalty, em, init_labels=init_labels)
    model = OfflineModel(
        dataset=dataset,
        K=K,
        sensor_clustering=prepared.sensor_clustering,
        cluster_bases=prepared.cluster_bases,
        features=prepared.features,
        ttf=prepared.ttf,
        fit=fit,
    )
    logger.info(
        f"Offline fit with lambda={penalty.lambda_}, alpha={penalty.alpha}: "
        f"{fit.iterations} EM iterations, selected sensors {model.selected_sensors}"
    )
    if model.degenerate:
        logger.warning("Offline fit selected no sensor for any mode")
    return model


def held_out_features(fitted: Union[OfflineModel, _Features], dataset: SignalDataset) -> FeatureMatrix:
    """CA-FPCA features of units outside the fit, standardized with the fit's constants."""
    n_points = fitted.sensor_clustering.bases[0].grid.size
    curves = dataset.values[:, :, :n_points]
    labels = assign_sensors(fitted.sensor_clustering, curves)
    return transform_cafpca(fitted.cluster_bases, fitted.features.standardization, curves, labels)


def cross_validate(
    dataset: SignalDataset,
    K: int,
    cv: Optional[CvConfig] = None,
    em: Optional[EmConfig] = None,
    fve: float = 0.95,
    kmeans: Optional[KmeansConfig] = None,
    init_labels: Optional[np.ndarray] = None,
) -> CvResult:
    """
    Grid search over (lambda, alpha) by k-fold cross-validation. Held-out units are predicted with
    the prior-weighted mixture mean, and their standardized ln TTF uses the training fold constants.
    """
    cv = cv or CvConfig()
    em = em or EmConfig()
    kmeans = kmeans or KmeansConfig()
    if dataset.n_systems < cv.folds:
        raise InsufficientData(f"{cv.folds}-fold cross-validation needs at least {cv.folds} systems")

    splitter = KFold(n_splits=cv.folds, shuffle=True, random_state=cv.seed)
    folds = []
    for fold, (train_index, test_index) in enumerate(splitter.split(np.arange(dataset.n_systems))):
        try:
            prepared = _prepare_features(restrict(dataset, systems=train_index), K, fve, kmeans, em.seed)
            held_out = restrict(dataset, systems=test_index)
            x_test = held_out_features(prepared, held_out)
        except (DataError, InsufficientData) as error:
            logger.warning(f"Skipping fold {fold}: {error.message}")
            continue
        fold_labels = None if init_labels is None else np.asarray(init_labels)[train_index]
        folds.append((fold, prepared, x_test, prepared.ttf.transform(held_out.ttf), fold_labels))

    if not folds:
        raise InsufficientData("Every cross-validation fold was skipped")

    rows = []
    for lam in cv.lambda_grid:
        for alpha in cv.alpha_grid:
            penalty = PenaltyConfig(lambda_=lam, alpha=alpha)
            errors = []
            for fold, prepared, x_test, y_test, fold_labels in folds:
                try:
                    fit = fit_em(prepared.features, prepared.ttf.y, K, penalty, em, init_labels=fold_labels)
                except FusionError as error:
                    logger.warning(f"Skipping fold {fold} at lambda={lam}, alpha={alpha}: {error.message}")
                    continue
                if fit.flagged_modes:
                    logger.warning(f"Skipping fold {fold} at lambda={lam}, alpha={alpha}: empty modes")
                    continue
                errors.append(float(np.mean((predict_mean(fit.params, x_test) - y_test) ** 2)))
            rows.append(
                {
                    "lambda": lam,
                    "alpha": alpha,
                    "mse": float(np.mean(errors)) if errors else np.nan,
                    "folds": len(errors),
                }
            )
            logger.debug(f"CV lambda={lam}, alpha={alpha}: {rows[-1]['mse']}")

    table = pd.DataFrame(rows, columns=["lambda", "alpha", "mse", "folds"])
    valid = table[table["folds"] > 0]
    if valid.empty:
        raise InsufficientData("No grid point produced a cross-validation error")
    # first minimum in grid order
    best = valid.loc[valid["mse"].idxmin()]
    logger.info(f"Cross-validation picked lambda={best['lambda']}, alpha={best['alpha']} (MSE {best['mse']})")
    return CvResult(best_lambda=float(best["lambda"]), best_alpha=float(best["alpha"]), table=table)


def _prepare_features(dataset: SignalDataset, K: int, fve: float, kmeans: KmeansConfig, seed: int) -> _Features:
    ttf = standardize_ln_ttf(dataset)
    clustering = cluster_sensors(
        dataset, K, fve=fve, seed=seed, restarts=kmeans.restarts, max_iterations=kmeans.max_iterations
    )
    cluster_bases, features = fit_cafpca(dataset, clustering.labels, K, fve)
    return _Features(sensor_clustering=clustering, cluster_bases=cluster_bases, features=features, ttf=ttf)


def attach_fit(
    dataset: SignalDataset,
    K: int,
    fit: FitResult,
    fve: float = 0.95,
    kmeans: Optional[KmeansConfig] = None,
    seed: int = 0,
) -> OfflineModel:
    """
    Offline model around a stored fit. The clustering and CA-FPCA features are deterministic given
    the training set and the seed, so they are recomputed rather than stored.
    """
    prepared = _prepare_features(dataset, K, fve, kmeans or KmeansConfig(), seed)
    if prepared.features.x.shape[1] != fit.params.n_features or fit.gamma.gamma.shape[0] != dataset.n_systems:
        raise DataError(
            f"Stored fit has {fit.params.n_features} features for {fit.gamma.gamma.shape[0]} systems, the training "
            f"set gives {prepared.features.x.shape[1]} features for {dataset.n_systems} systems"
        )
    return OfflineModel(
        dataset=dataset,
        K=K,
        sensor_clustering=prepared.sensor_clustering,
        cluster_bases=prepared.cluster_bases,
        features=prepared.features,
        ttf=prepared.ttf,
        fit=fit,
    )
