import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from fusion_prognostics.exceptions import DataError, InsufficientData, NumericalError
from fusion_prognostics.fda.model import FeatureMatrix
from fusion_prognostics.mixture.likelihood import design, e_step, penalized_objective
from fusion_prognostics.mixture.model import (
    EmConfig,
    FitResult,
    MixtureParams,
    PenaltyConfig,
    SensorSelectionReport,
)
from fusion_prognostics.mixture.solver import m_step_mode, pi_step

logger = logging.getLogger("fusion_prognostics.mixture")

LABEL_CONFIDENCE = 0.9
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class EmRun:
    """One EM start: the parameters with the lowest objective so far and how it got there."""

    start: int
    params: MixtureParams
    flagged: tuple[int, ...]
    trace: tuple[float, ...]
    converged: bool
    iterations: int
    # column sums of the responsibilities at params
    mode_weights: np.ndarray

    @property
    def objective(self) -> float:
        return min(self.trace)

    def collapsed(self, minimum_weight: float) -> bool:
        return bool(np.min(self.mode_weights) < minimum_weight)


def fit_em(
    x,
    y: np.ndarray,
    K: int,
    penalty: PenaltyConfig,
    cfg: Optional[EmConfig] = None,
    init_labels: Optional[np.ndarray] = None,
    group_offsets: Optional[Sequence[tuple[int, int]]] = None,
    sensor_ids: Optional[Sequence[str]] = None,
) -> FitResult:
    """
    Penalized EM for the mixture of Gaussian regressions. Every iteration runs the E-step, the pi
    line search and the K per-mode solves; the penalized negative log-likelihood never increases.

    Without labels, cfg.n_starts seeded random starts run for cfg.start_iterations iterations each,
    and the start with the lowest objective among those keeping every mode above
    cfg.minimum_mode_fraction of the systems is run to convergence.
    """
    cfg = cfg or EmConfig()
    design_matrix = design(x)
    y = np.asarray(y, dtype=float)
    n = design_matrix.shape[0]
    if y.size != n:
        raise DataError(f"{y.size} responses for {n} design rows")
    if not n > K:
        raise InsufficientData(f"EM with K={K} needs more than {K} systems, got {n}")
    if isinstance(x, FeatureMatrix):
        group_offsets = x.group_offsets if group_offsets is None else group_offsets
        sensor_ids = x.sensor_ids if sensor_ids is None else sensor_ids
    if group_offsets is None:
        group_offsets = [(j, j + 1) for j in range(design_matrix.shape[1])]
    if sensor_ids is None:
        sensor_ids = [str(p) for p in range(len(group_offsets))]

    if init_labels is not None or cfg.init_mode == "labels" or K == 1:
        starts = [_initial_responsibilities(n, K, cfg, init_labels)]
    else:
        starts = [_random_responsibilities(n, K, cfg.seed, start) for start in range(cfg.n_starts)]

    minimum_weight = cfg.minimum_mode_fraction * n
    if len(starts) == 1:
        run = _begin(0, starts[0], group_offsets, design_matrix, y, penalty, cfg)
        run = _iterate(run, design_matrix, y, penalty, cfg, cfg.max_iterations)
    else:
        runs = []
        for start, gamma in enumerate(starts):
            run = _begin(start, gamma, group_offsets, design_matrix, y, penalty, cfg)
            run = _iterate(run, design_matrix, y, penalty, cfg, cfg.start_iterations, minimum_weight)
            logger.info(
                f"EM start {start}: objective {run.objective:.6g} after {run.iterations} iterations, "
                f"mode weights {np.round(run.mode_weights, 2).tolist()}"
            )
            runs.append(run)
        run = best_start(runs, minimum_weight)
        if not run.converged and run.iterations < cfg.max_iterations:
            run = _iterate(run, design_matrix, y, penalty, cfg, cfg.max_iterations - run.iterations)

    collapsed = K > 1 and run.collapsed(minimum_weight)
    if collapsed:
        logger.warning(
            f"The EM fit left a mode below {cfg.minimum_mode_fraction:.3g} of the systems, "
            f"mode weights {np.round(run.mode_weights, 2).tolist()}"
        )
    if not run.converged:
        logger.warning(f"EM stopped after {run.iterations} iterations without reaching tolerance {cfg.tolerance}")
    if run.flagged:
        logger.warning(f"Modes {list(run.flagged)} carried almost no responsibility and kept their parameters")

    result = FitResult(
        params=run.params,
        gamma=e_step(run.params, design_matrix, y),
        objective_trace=np.array(run.trace),
        selection=selection_report(run.params, sensor_ids),
        converged=run.converged,
        iterations=run.iterations,
        flagged_modes=run.flagged,
        start=run.start,
        collapsed=collapsed,
    )
    if result.degenerate:
        logger.warning("No sensor is significant for any failure mode")
    return result


def best_start(runs: Sequence[EmRun], minimum_weight: float) -> EmRun:
    """Lowest objective among the runs keeping every mode weight at or above minimum_weight, else overall."""
    if not runs:
        raise DataError("EM needs at least one start")
    kept = [run for run in runs if not run.collapsed(minimum_weight)] or list(runs)
    return min(kept, key=lambda run: (run.objective, run.start))


def _begin(
    start: int,
    gamma: np.ndarray,
    group_offsets: Sequence[tuple[int, int]],
    x: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyConfig,
    cfg: EmConfig,
) -> EmRun:
    K = gamma.shape[1]
    params = MixtureParams(
        pi=gamma.mean(axis=0) / gamma.mean(axis=0).sum(),
        rho=np.ones(K),
        phi0=np.zeros(K),
        phi=np.zeros((K, x.shape[1])),
        group_offsets=group_offsets,
    )
    params, flagged = m_step(params, gamma, x, y, penalty, cfg)
    return EmRun(
        start=start,
        params=params,
        flagged=tuple(flagged),
        trace=(penalized_objective(params, x, y, penalty),),
        converged=False,
        iterations=0,
        mode_weights=e_step(params, x, y).mode_weights,
    )


def _iterate(
    run: EmRun,
    x: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyConfig,
    cfg: EmConfig,
    budget: int,
    minimum_weight: Optional[float] = None,
) -> EmRun:
    """Continues a run for at most `budget` iterations, stopping early on a collapsed mode when given a minimum."""
    params, flagged = run.params, list(run.flagged)
    best = (run.objective, params, flagged)
    trace = list(run.trace)
    converged = False
    iterations = run.iterations
    for iterations in range(run.iterations + 1, run.iterations + budget + 1):
        gamma = e_step(params, x, y).gamma
        pi, _ = pi_step(params, gamma, x, y, penalty)
        params, flagged = m_step(params.with_pi(pi), gamma, x, y, penalty, cfg)

        objective = penalized_objective(params, x, y, penalty)
        if not np.isfinite(objective):
            raise NumericalError("Penalized objective became non-finite", iteration=iterations)
        if objective > trace[-1] + MONOTONE_SLACK * max(1.0, abs(trace[-1])):
            logger.warning(f"Penalized objective increased at iteration {iterations}: {trace[-1]} -> {objective}")
        trace.append(objective)
        if objective < best[0]:
            best = (objective, params, flagged)

        if abs(trace[-2] - objective) <= cfg.tolerance * max(1.0, abs(trace[-2])):
            converged = True
            break
        if minimum_weight is not None and np.min(gamma.sum(axis=0)) < minimum_weight:
            break

    _, params, flagged = best
    return EmRun(
        start=run.start,
        params=params,
        flagged=tuple(flagged),
        trace=tuple(trace),
        converged=converged,
        iterations=iterations,
        mode_weights=e_step(params, x, y).mode_weights,
    )


def m_step(
    params: MixtureParams,
    gamma: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyConfig,
    cfg: EmConfig,
) -> tuple[MixtureParams, list[int]]:
    flagged = []
    for k in range(params.K):
        update = m_step_mode(
            gamma[:, k],
            float(params.pi[k]),
            x,
            y,
            penalty,
            params.group_offsets,
            start=(float(params.rho[k]), float(params.phi0[k]), params.phi[k]),
            inner_max_iterations=cfg.inner_max_iterations,
            inner_tolerance=cfg.inner_tolerance,
        )
        if update.flagged:
            flagged.append(k)
        params = params.with_mode(k, update.rho, update.phi0, update.phi)
    return params, flagged


def selection_report(params: MixtureParams, sensor_ids: Optional[Sequence[str]] = None) -> SensorSelectionReport:
    if sensor_ids is None:
        sensor_ids = [str(p) for p in range(len(params.group_offsets))]
    return SensorSelectionReport(sensor_ids=tuple(sensor_ids), norms=params.group_norms())


def top_sensors(report: SensorSelectionReport, mode: int, n: int = 4) -> list[tuple[str, float]]:
    """Leading significant sensors of a mode by l2 norm, ties in sensor order."""
    norms = report.norms[:, mode]
    order = sorted(np.flatnonzero(report.significant[:, mode]), key=lambda p: (-norms[p], p))
    return [(report.sensor_ids[p], float(norms[p])) for p in order[:n]]


def predict_mean(params: MixtureParams, x) -> np.ndarray:
    """Prior-weighted mixture mean sum_k pi_k (phi0_k + x' phi_k) / rho_k."""
    x = design(x)
    return ((params.phi0[None, :] + x @ params.phi.T) / params.rho[None, :]) @ params.pi


def _initial_responsibilities(n: int, K: int, cfg: EmConfig, init_labels: Optional[np.ndarray]) -> np.ndarray:
    if init_labels is None:
        if cfg.init_mode == "labels":
            raise DataError("EM is configured to start from labels but none were provided")
        return _random_responsibilities(n, K, cfg.seed, 0)

    labels = np.asarray(init_labels, dtype=int)
    if labels.shape != (n,) or np.any((labels < 0) | (labels >= K)):
        raise DataError(f"Initial labels must be {n} integers in [0, {K})")
    if K == 1:
        return np.ones((n, 1))
    gamma = np.full((n, K), (1 - LABEL_CONFIDENCE) / (K - 1))
    gamma[np.arange(n), labels] = LABEL_CONFIDENCE
    return gamma


def _random_responsibilities(n: int, K: int, seed: int, start: int) -> np.ndarray:
    """Dirichlet(1) rows, one independent stream per start."""
    return np.random.default_rng([seed, start]).dirichlet(np.ones(K), size=n)
