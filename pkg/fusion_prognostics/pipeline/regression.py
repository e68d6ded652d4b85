"""
Weighted lasso regression of standardized ln TTF on MFPC scores.

The objective is sum_i w_i (y_i - c0 - z_i' c)^2 + lambda |c|_1. Weighted centering removes the
intercept and scaling the rows by sqrt(w) turns it into an ordinary lasso, solved by coordinate
descent along a path.
"""
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import lasso_path

from fusion_prognostics.exceptions import DataError, InsufficientData, NumericalError

logger = logging.getLogger("fusion_prognostics.pipeline")

RANK_DEFICIENT_FLOOR = 1e-2
SOLVER_TOLERANCE = 1e-12
SOLVER_MAX_ITERATIONS = 100_000


@dataclass(frozen=True)
class LassoFit:
    intercept: float
    coefficients: np.ndarray
    lasso_lambda: float

    def predict(self, z: np.ndarray) -> np.ndarray:
        return self.intercept + np.atleast_2d(z) @ self.coefficients


@dataclass(frozen=True)
class _WeightedProblem:
    design: np.ndarray
    response: np.ndarray
    z_mean: np.ndarray
    y_mean: float


def fit_weighted_lasso(z: np.ndarray, y: np.ndarray, weights: np.ndarray, lasso_lambda: float) -> LassoFit:
    problem = _weighted_problem(z, y, weights)
    if lasso_lambda <= 0:
        coefficients = np.linalg.lstsq(problem.design, problem.response, rcond=None)[0]
    else:
        coefficients = _path(problem, np.array([lasso_lambda]))[:, 0]
    return _finish(problem, coefficients, lasso_lambda)


def lambda_path(z: np.ndarray, y: np.ndarray, weights: np.ndarray, length: int = 50, ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced penalties from the smallest lambda that zeroes every coefficient down to ratio times it."""
    problem = _weighted_problem(z, y, weights)
    lambda_max = 2 * float(np.max(np.abs(problem.design.T @ problem.response), initial=0.0))
    if not lambda_max > 0:
        return np.zeros(1)

    lambdas = np.geomspace(lambda_max, ratio * lambda_max, length)
    rank = np.linalg.matrix_rank(problem.design)
    if rank < problem.design.shape[1]:
        floor = RANK_DEFICIENT_FLOOR * lambda_max
        logger.warning(f"Weighted design has rank {rank} < {problem.design.shape[1]}, flooring lambda at {floor:.3g}")
        lambdas = lambdas[lambdas >= floor]
    return lambdas


def select_lambda_loocv(
    z: np.ndarray, y: np.ndarray, weights: np.ndarray, lambdas: np.ndarray
) -> tuple[float, np.ndarray]:
    """Penalty with the smallest weighted leave-one-out squared error, and the errors along the path."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    n = y.size
    if n < 3:
        raise InsufficientData("Leave-one-out selection needs at least 3 units")

    errors = np.zeros(lambdas.size)
    for i in range(n):
        keep = np.arange(n) != i
        problem = _weighted_problem(z[keep], y[keep], weights[keep])
        if lambdas.size == 1 and lambdas[0] <= 0:
            coefficients = np.linalg.lstsq(problem.design, problem.response, rcond=None)[0][:, None]
        else:
            coefficients = _path(problem, lambdas)
        predictions = problem.y_mean + (z[i] - problem.z_mean) @ coefficients
        errors += weights[i] * (y[i] - predictions) ** 2
    errors /= weights.sum()

    best = int(np.argmin(errors))
    return float(lambdas[best]), errors


def _weighted_problem(z: np.ndarray, y: np.ndarray, weights: np.ndarray) -> _WeightedProblem:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if z.shape[0] != y.size or weights.shape != y.shape:
        raise DataError("Scores, responses and weights disagree on the number of units")
    if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
        raise DataError("Regression weights must be positive and finite")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise DataError("Regression inputs contain non-finite values")

    total = weights.sum()
    z_mean = weights @ z / total
    y_mean = float(weights @ y / total)
    root = np.sqrt(weights)
    return _WeightedProblem(
        design=(z - z_mean) * root[:, None], response=(y - y_mean) * root, z_mean=z_mean, y_mean=y_mean
    )


def _path(problem: _WeightedProblem, lambdas: np.ndarray) -> np.ndarray:
    """H x len(lambdas) coefficients, lambdas in decreasing order."""
    n = problem.response.size
    # scikit-learn scales the squared loss by 1 / (2 n)
    _, coefficients, _ = lasso_path(
        problem.design,
        problem.response,
        alphas=lambdas / (2 * n),
        tol=SOLVER_TOLERANCE,
        max_iter=SOLVER_MAX_ITERATIONS,
    )
    return coefficients


def _finish(problem: _WeightedProblem, coefficients: np.ndarray, lasso_lambda: float) -> LassoFit:
    if not np.all(np.isfinite(coefficients)):
        raise NumericalError("Weighted regression produced non-finite coefficients")
    return LassoFit(
        intercept=float(problem.y_mean - problem.z_mean @ coefficients),
        coefficients=coefficients,
        lasso_lambda=float(lasso_lambda),
    )
