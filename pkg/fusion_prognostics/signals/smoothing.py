"""
Robust local quadratic regression (rloess) for degradation signals.

Each fitted value is a weighted least-squares quadratic in a window holding the
ceil(bandwidth * G) nearest points, with tricube locality weights. Robustness passes
re-weight the points with the bisquare of their residual scaled by six median absolute
residuals, so outliers beyond that cutoff get weight zero.
"""

import logging
import math
from typing import Iterable, Sequence

import numpy as np
from sklearn.model_selection import KFold

from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.signals.model import SmoothingConfig

logger = logging.getLogger("fusion_prognostics.signals.smoothing")

DEFAULT_BANDWIDTH_CANDIDATES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

_POLYNOMIAL_TERMS = 3


def smooth_rloess(series: np.ndarray, grid: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if series.shape != grid.shape:
        raise DataError(f"Series has {series.size} points but the grid has {grid.size}")
    if not np.all(np.isfinite(series)):
        raise DataError("Smoothing needs a finite series")

    span = span_points(cfg.bandwidth, grid.size)
    fitted, _ = _robust_fit(grid, series, span, cfg.robust_iterations)
    return fitted


def smooth_curves(curves: np.ndarray, grid: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Smooths every row of a matrix (or every sensor of a P x G block)."""
    curves = np.asarray(curves, dtype=float)
    return np.vstack([smooth_rloess(row, grid, cfg) for row in curves.reshape(-1, curves.shape[-1])]).reshape(
        curves.shape
    )


def span_points(bandwidth: float, n_points: int) -> int:
    span = math.ceil(bandwidth * n_points - 1e-12)
    if span < _POLYNOMIAL_TERMS:
        raise InsufficientData(
            f"Bandwidth {bandwidth} covers {span} of {n_points} points, a quadratic fit needs {_POLYNOMIAL_TERMS}",
            bandwidth=bandwidth,
            n_points=n_points,
        )
    return min(span, n_points)


def select_bandwidth_cv(
    series: Iterable[np.ndarray],
    grid: np.ndarray,
    candidates: Sequence[float] = DEFAULT_BANDWIDTH_CANDIDATES,
    folds: int = 5,
    robust_iterations: int = 5,
    seed: int = 0,
) -> float:
    """Picks the bandwidth with the smallest k-fold prediction error over the given series."""
    grid = np.asarray(grid, dtype=float)
    series = [np.asarray(s, dtype=float) for s in series]
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(splitter.split(grid))

    errors = []
    for bandwidth in candidates:
        total, count = 0.0, 0
        for train_index, test_index in splits:
            n_train = train_index.size
            span = math.ceil(bandwidth * n_train - 1e-12)
            if span < _POLYNOMIAL_TERMS:
                total = math.inf
                break
            for values in series:
                x, y = grid[train_index], values[train_index]
                _, robustness = _robust_fit(x, y, min(span, n_train), robust_iterations)
                predicted = _local_quadratic(x, y, robustness, grid[test_index], min(span, n_train))
                total += float(np.sum((values[test_index] - predicted) ** 2))
                count += test_index.size
        errors.append(total / count if count else math.inf)
        logger.debug(f"Bandwidth {bandwidth}: cross-validated squared error {errors[-1]}")

    best = int(np.argmin(errors))
    if not math.isfinite(errors[best]):
        raise InsufficientData("No bandwidth candidate leaves enough points for a quadratic fit")
    return float(candidates[best])


def _robust_fit(x: np.ndarray, y: np.ndarray, span: int, iterations: int) -> tuple[np.ndarray, np.ndarray]:
    robustness = np.ones_like(y)
    fitted = _local_quadratic(x, y, robustness, x, span)

    scale_floor = 1e-12 * max(float(np.ptp(y)), 1.0)
    for _ in range(iterations):
        residuals = y - fitted
        scale = max(float(np.median(np.abs(residuals))), scale_floor)
        u = np.clip(residuals / (6.0 * scale), -1.0, 1.0)
        robustness = (1.0 - u**2) ** 2
        fitted = _local_quadratic(x, y, robustness, x, span)

    return fitted, robustness


def _local_quadratic(x: np.ndarray, y: np.ndarray, robustness: np.ndarray, x_eval: np.ndarray, span: int) -> np.ndarray:
    offsets = x[None, :] - x_eval[:, None]
    distances = np.abs(offsets)
    u = offsets / _window_radius(np.sort(distances, axis=1), span)[:, None]
    weights = _tricube(u) * robustness[None, :]

    # windows whose points were all rejected as outliers widen to the nearest accepted points
    starved = np.count_nonzero(weights > 0, axis=1) < _POLYNOMIAL_TERMS
    accepted = robustness > 0
    if starved.any() and np.count_nonzero(accepted) >= _POLYNOMIAL_TERMS:
        masked = np.where(accepted[None, :], distances[starved], np.inf)
        radius = _window_radius(np.sort(masked, axis=1), min(span, int(np.count_nonzero(accepted))))
        u[starved] = offsets[starved] / radius[:, None]
        weights[starved] = _tricube(u[starved]) * robustness[None, :]
    elif starved.any():
        weights[starved] = _tricube(u[starved])

    moments = np.stack([np.sum(weights * u**k, axis=1) for k in range(2 * _POLYNOMIAL_TERMS - 1)], axis=1)
    normal = np.stack([moments[:, k : k + _POLYNOMIAL_TERMS] for k in range(_POLYNOMIAL_TERMS)], axis=1)
    rhs = np.stack([np.sum(weights * u**k * y[None, :], axis=1) for k in range(_POLYNOMIAL_TERMS)], axis=1)

    try:
        coefficients = np.linalg.solve(normal, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        coefficients = np.vstack([np.linalg.lstsq(a, b, rcond=None)[0] for a, b in zip(normal, rhs)])
    return coefficients[:, 0]


def _window_radius(sorted_distances: np.ndarray, span: int) -> np.ndarray:
    available = np.count_nonzero(np.isfinite(sorted_distances), axis=1)
    inside = sorted_distances[:, span - 1]
    beyond = np.where(available > span, sorted_distances[:, min(span, sorted_distances.shape[1] - 1)], np.inf)
    # halfway to the first point outside the window, so every point inside gets positive weight
    return np.where(np.isfinite(beyond), 0.5 * (inside + beyond), inside * (1.0 + 1.0 / span))


def _tricube(u: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(u) ** 3, 0.0, None) ** 3
