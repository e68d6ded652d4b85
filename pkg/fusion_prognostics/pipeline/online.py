import logging
from dataclasses import replace
from functools import cached_property
from typing import Optional

import numpy as np

from fusion_prognostics.clustering.operations import knn_diagnose
from fusion_prognostics.exceptions import DataError, InsufficientData, NumericalError
from fusion_prognostics.fda.fpca import project_scores
from fusion_prognostics.fda.mfpca import fit_mfpca
from fusion_prognostics.pipeline.model import (
    ModeBasis,
    OfflineModel,
    OnlineConfig,
    OnlineContext,
    RegressionModel,
    RulPrediction,
)
from fusion_prognostics.pipeline.regression import fit_weighted_lasso, lambda_path, select_lambda_loocv
from fusion_prognostics.signals.model import SignalDataset, SmoothingConfig, SystemRecord
from fusion_prognostics.signals.operations import grid_points_through, restrict, standardize_ln_values
from fusion_prognostics.signals.smoothing import smooth_curves

logger = logging.getLogger("fusion_prognostics.pipeline")

MIN_SMOOTHING_POINTS = 3


def smooth_observed(values: np.ndarray, grid: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Smooths a P x n block of readings, widening the bandwidth so short prefixes keep 3 points per window."""
    n_points = values.shape[-1]
    if n_points < MIN_SMOOTHING_POINTS:
        return np.array(values, dtype=float)
    bandwidth = min(1.0, max(cfg.bandwidth, MIN_SMOOTHING_POINTS / n_points))
    effective = cfg if bandwidth == cfg.bandwidth else cfg.model_copy(update={"bandwidth": bandwidth})
    return smooth_curves(values, grid[:n_points], effective)


def smooth_dataset(dataset: SignalDataset, cfg: SmoothingConfig) -> SignalDataset:
    """Smooths every system over its whole observed life; the unobserved tail stays NaN."""
    systems = []
    for system in dataset.systems:
        values = system.values.copy()
        n = system.observed_through
        values[:, :n] = smooth_observed(values[:, :n], dataset.time_grid, cfg)
        systems.append(replace(system, values=values))
    return replace(dataset, systems=tuple(systems))


def online_prepare(
    dataset: SignalDataset,
    offline: OfflineModel,
    t_star: float,
    cfg: Optional[OnlineConfig] = None,
    smoothed: Optional[SignalDataset] = None,
) -> OnlineContext:
    """
    MFPCA bases of the training units still running at t*: one on the union of the sensors selected
    for any mode, used for diagnosis, and one per mode on that mode's sensors, used for regression.
    `dataset` holds the training units over their full lives, in the order of the offline fit.
    """
    cfg = cfg or OnlineConfig()
    if dataset.n_systems != offline.dataset.n_systems:
        raise DataError("Online training units must match the units of the offline fit")
    smoothed = smoothed if smoothed is not None else smooth_dataset(dataset, cfg.smoothing)

    surviving = np.flatnonzero(dataset.ttf > t_star)
    if surviving.size < 2:
        raise InsufficientData(f"{surviving.size} training units survive t*={t_star}, at least 2 are needed")
    n_points = grid_points_through(dataset.time_grid, t_star)
    if n_points < 2:
        raise InsufficientData(f"t*={t_star} leaves {n_points} grid points")

    union = offline.union_sensors
    if not union:
        raise DataError("No sensor was selected for any failure mode")

    union_basis, union_scores = fit_mfpca(
        restrict(smoothed, systems=surviving, sensors=union, n_points=n_points), cfg.fve
    )
    modes = offline.labels[surviving]

    mode_bases = {}
    for k in range(offline.K):
        members = np.flatnonzero(modes == k)
        sensors = offline.selected_sensors[k]
        fallback = members.size < cfg.minimum_mode_units or not sensors
        if fallback:
            logger.warning(
                f"Mode {k} has {members.size} surviving units and {len(sensors)} selected sensors at t*={t_star}, "
                f"its regression uses every survivor on the union sensors"
            )
            members, sensors = np.arange(surviving.size), union
        basis, scores = fit_mfpca(
            restrict(smoothed, systems=surviving[members], sensors=sensors, n_points=n_points), cfg.fve
        )
        mode_bases[k] = ModeBasis(
            mode=k, sensors=tuple(sensors), members=members, basis=basis, scores=scores, fallback=fallback
        )

    return OnlineContext(
        t_star=float(t_star),
        n_points=n_points,
        surviving=surviving,
        modes=modes,
        ttf=dataset.ttf[surviving],
        union_sensors=tuple(union),
        union_basis=union_basis,
        union_scores=union_scores,
        mode_bases=mode_bases,
        knn=cfg.knn,
    )


def union_scores_of(ctx: OnlineContext, unit_values: np.ndarray) -> np.ndarray:
    curves = np.asarray(unit_values, dtype=float)[list(ctx.union_sensors)]
    return project_scores(ctx.union_basis, ctx.union_scores.standardization, curves[None])[0]


def diagnose(ctx: OnlineContext, unit_values: np.ndarray) -> int:
    """Mode of a unit from its P x G' readings (G' covering the context grid), by KNN in the union score space."""
    return knn_diagnose(ctx.union_scores.zeta, ctx.modes, union_scores_of(ctx, unit_values), ctx.knn)


def fit_weighted_regression(ctx: OnlineContext, mode: int, cfg: Optional[OnlineConfig] = None) -> RegressionModel:
    cfg = cfg or OnlineConfig()
    mode_basis = ctx.mode_bases[mode]
    members = mode_basis.members
    if members.size < 3:
        raise InsufficientData(f"Regression for mode {mode} needs at least 3 units, got {members.size}")

    H = min(mode_basis.scores.H, members.size - 2)
    if H < mode_basis.scores.H:
        logger.info(f"Mode {mode}: using {H} of {mode_basis.scores.H} MFPC scores for {members.size} units")
    z = mode_basis.scores.zeta[:, :H]

    # distance to the mode centroid in the diagnosis space, misplaced units get small weights
    in_mode = ctx.modes == mode
    centroid = ctx.union_scores.zeta[in_mode].mean(axis=0) if in_mode.any() else ctx.union_scores.zeta.mean(axis=0)
    distances = np.linalg.norm(ctx.union_scores.zeta[members] - centroid, axis=1)
    weights = 1.0 / (distances + cfg.weight_epsilon)

    ttf = standardize_ln_values(ctx.ttf[members])
    lambdas = lambda_path(z, ttf.y, weights, cfg.lasso_path_length, cfg.lasso_path_ratio)
    best, _ = select_lambda_loocv(z, ttf.y, weights, lambdas)
    fit = fit_weighted_lasso(z, ttf.y, weights, best)

    return RegressionModel(
        mode=mode,
        mode_basis=mode_basis,
        n_components=H,
        intercept=fit.intercept,
        coefficients=fit.coefficients,
        weights=weights,
        lasso_lambda=fit.lasso_lambda,
        ttf=ttf,
        fallback=mode_basis.fallback,
    )


def mode_scores_of(model: RegressionModel, unit_values: np.ndarray) -> np.ndarray:
    basis = model.mode_basis
    curves = np.asarray(unit_values, dtype=float)[list(basis.sensors)]
    return project_scores(basis.basis, basis.scores.standardization, curves[None])[0]


def predict_rul(model: RegressionModel, t_star: float, scores: np.ndarray, unit_id: str = "") -> RulPrediction:
    """Remaining life exp((c0 + z'c) ln_var + ln_mean) - t*, clamped at zero."""
    scores = np.asarray(scores, dtype=float)[: model.n_components]
    if not np.all(np.isfinite(scores)):
        raise NumericalError("Unit scores are not finite", unit_id=unit_id)

    standardized = model.intercept + float(scores @ model.coefficients)
    rul = float(model.ttf.inverse(standardized)) - t_star
    if not np.isfinite(rul):
        raise NumericalError("Predicted remaining life is not finite", unit_id=unit_id)

    clamped = rul < 0
    if clamped:
        logger.warning(f"Unit {unit_id}: predicted life ends before t*={t_star}, remaining life set to 0")
    return RulPrediction(
        unit_id=unit_id,
        t_star=float(t_star),
        mode=model.mode,
        rul=max(rul, 0.0),
        clamped=bool(clamped),
        fallback=model.fallback,
        mode_scores=tuple(scores.tolist()),
    )


class OnlinePredictor:
    """
    Predicts remaining lives of units observed up to their own t*. Smoothed training signals,
    contexts and regressions are cached, since units sharing a grid prefix share them.
    """

    def __init__(self, dataset: SignalDataset, offline: OfflineModel, cfg: Optional[OnlineConfig] = None):
        self.dataset = dataset
        self.offline = offline
        self.cfg = cfg or OnlineConfig()
        self._contexts: dict = {}
        self._regressions: dict = {}

    @cached_property
    def smoothed(self) -> SignalDataset:
        return smooth_dataset(self.dataset, self.cfg.smoothing)

    def context(self, t_star: float) -> OnlineContext:
        grid = self.dataset.time_grid
        n_points = grid_points_through(grid, t_star)
        if n_points < 2:
            raise InsufficientData(f"t*={t_star} leaves {n_points} grid points")
        context_time = float(t_star)
        while np.sum(self.dataset.ttf > context_time) < self.cfg.minimum_survivors:
            n_points -= 1
            if n_points < 2:
                raise InsufficientData(f"Fewer than {self.cfg.minimum_survivors} training units survive t*={t_star}")
            context_time = float(grid[n_points - 1])

        key = (n_points, np.flatnonzero(self.dataset.ttf > context_time).tobytes())
        if key not in self._contexts:
            self._contexts[key] = online_prepare(
                self.dataset, self.offline, context_time, self.cfg, smoothed=self.smoothed
            )
        return self._contexts[key]

    def regression(self, ctx: OnlineContext, mode: int) -> RegressionModel:
        key = (ctx.n_points, ctx.surviving.tobytes(), mode)
        if key not in self._regressions:
            self._regressions[key] = fit_weighted_regression(ctx, mode, self.cfg)
        return self._regressions[key]

    def predict(self, unit: SystemRecord, t_star: float) -> RulPrediction:
        n_points = grid_points_through(self.dataset.time_grid, t_star)
        observed = unit.observed(n_points)
        smoothed = smooth_observed(observed, self.dataset.time_grid, self.cfg.smoothing)

        ctx = self.context(t_star)
        mode = diagnose(ctx, smoothed)
        model = self.regression(ctx, mode)
        prediction = predict_rul(model, t_star, mode_scores_of(model, smoothed), unit_id=unit.id)
        return replace(
            prediction,
            context_t_star=ctx.t_star if ctx.n_points < n_points else None,
            union_scores=tuple(union_scores_of(ctx, smoothed).tolist()),
        )
