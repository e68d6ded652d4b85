"""
Functional principal component analysis on a shared dense grid.

Curves are discretized on the grid and integrals are replaced by trapezoid quadrature, so the
covariance operator becomes W^(1/2) C W^(1/2) and eigenvectors are mapped back with W^(-1/2).
"""
import logging
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.fda.model import EigenBasis, Standardization

logger = logging.getLogger("fusion_prognostics.fda")

FVE_TOLERANCE = 1e-12
PACE_RIDGE = 1e-10


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise InsufficientData("Quadrature needs at least 2 grid points")
    steps = np.diff(grid)
    weights = np.zeros_like(grid)
    weights[:-1] += steps / 2
    weights[1:] += steps / 2
    return weights


def fit_fpca(
    curves: np.ndarray,
    grid: np.ndarray,
    quadrature: Optional[np.ndarray] = None,
    estimate_noise: bool = True,
    max_components: Optional[int] = None,
) -> EigenBasis:
    curves = _check_curves(curves)
    grid = np.asarray(grid, dtype=float)
    if curves.shape[1] != grid.size:
        raise DataError(f"Curves have {curves.shape[1]} points, the grid has {grid.size}")

    weights = trapezoid_weights(grid) if quadrature is None else np.asarray(quadrature, dtype=float)
    basis = _decompose(curves, grid, weights, max_components)

    if estimate_noise:
        noise_var = _noise_variance(curves - basis.mean, grid)
        basis = EigenBasis(
            grid=basis.grid,
            mean=basis.mean,
            eigenfunctions=basis.eigenfunctions,
            eigenvalues=basis.eigenvalues,
            noise_var=noise_var,
            quadrature_weights=basis.quadrature_weights,
        )
    return basis


def fit_multivariate_basis(
    curves: np.ndarray,
    grid: np.ndarray,
    sensor_ids: Optional[Sequence[str]] = None,
    max_components: Optional[int] = None,
) -> EigenBasis:
    """
    PCA of n x P x G curves concatenated sensor by sensor, with the trapezoid weights of the grid
    repeated on every block. The noise variance is zero, so scores are plain projections.
    """
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 3:
        raise DataError("Multivariate curves must be an n x P x G array")
    n, n_sensors, n_points = curves.shape
    if n_sensors < 1:
        raise DataError("Multivariate FPCA needs at least one sensor")
    grid = np.asarray(grid, dtype=float)
    if n_points != grid.size:
        raise DataError(f"Curves have {n_points} points, the grid has {grid.size}")

    flat = _check_curves(curves.reshape(n, n_sensors * n_points))
    weights = np.tile(trapezoid_weights(grid), n_sensors)
    basis = _decompose(flat, grid, weights, max_components)
    return EigenBasis(
        grid=basis.grid,
        mean=basis.mean,
        eigenfunctions=basis.eigenfunctions,
        eigenvalues=basis.eigenvalues,
        noise_var=0.0,
        quadrature_weights=basis.quadrature_weights,
        sensor_ids=None if sensor_ids is None else tuple(sensor_ids),
    )


def select_fve(eigenvalues: np.ndarray, threshold: float = 0.95) -> int:
    eigenvalues = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    total = eigenvalues.sum()
    if eigenvalues.size == 0 or not total > 0:
        raise DataError("Fraction of variance explained is undefined, all eigenvalues are zero")
    if not 0 < threshold <= 1:
        raise DataError(f"FVE threshold must lie in (0, 1], got {threshold}")

    explained = np.cumsum(eigenvalues) / total
    return int(np.argmax(explained >= threshold - FVE_TOLERANCE)) + 1


def pace_scores(basis: EigenBasis, curves: np.ndarray, noise_var: Optional[float] = None) -> np.ndarray:
    """
    Conditional-expectation scores Lambda (Lambda + s2 B)^-1 Phi' W (s - mu) with B = Phi' W^2 Phi.

    This is the discretized form of Lambda Phi' W (Sigma + s2 I)^-1 W (s - mu) after the
    Woodbury identity. With s2 = 0 the scores are the quadrature projections.
    """
    curves = _check_curves(np.atleast_2d(curves), minimum=1)
    if curves.shape[1] != basis.mean.size:
        raise DataError(f"Curves have {curves.shape[1]} points, the basis has {basis.mean.size}")

    noise_var = basis.noise_var if noise_var is None else float(noise_var)
    phi = basis.eigenfunctions
    w = basis.quadrature_weights
    projections = (curves - basis.mean) @ (phi * w).T
    if noise_var <= 0 or basis.n_components == 0:
        return projections

    conditioning = np.diag(basis.eigenvalues) + noise_var * (phi * w**2) @ phi.T
    try:
        solved = scipy.linalg.solve(conditioning, projections.T, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        logger.warning(f"PACE conditioning matrix is singular, adding {PACE_RIDGE} to its diagonal")
        conditioning = conditioning + PACE_RIDGE * np.eye(basis.n_components)
        solved = np.linalg.solve(conditioning, projections.T)
    return solved.T * basis.eigenvalues


def project_scores(basis: EigenBasis, standardization: Optional[Standardization], curves: np.ndarray) -> np.ndarray:
    """
    Scores of new units against a fitted basis, standardized with the stored training constants.

    Univariate bases take n x G' curves, multivariate ones n x P x G' curves, with G' at least the
    basis grid length. Readings past the basis grid are ignored.
    """
    curves = np.asarray(curves, dtype=float)
    n_points = basis.grid.size
    if curves.shape[-1] < n_points:
        raise InsufficientData(f"Curves cover {curves.shape[-1]} grid points, the basis needs {n_points}")

    prefix = curves[..., :n_points]
    if prefix.ndim == 3:
        prefix = prefix.reshape(prefix.shape[0], -1)
    raw = pace_scores(basis, np.atleast_2d(prefix))
    if standardization is None:
        return raw
    return standardization.apply(raw[:, : standardization.means.size])


def reconstruct(basis: EigenBasis, scores: np.ndarray, n_components: Optional[int] = None) -> np.ndarray:
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    q = scores.shape[1] if n_components is None else int(n_components)
    return basis.mean + scores[:, :q] @ basis.eigenfunctions[:q]


def standardize_columns(raw: np.ndarray) -> tuple[Standardization, np.ndarray]:
    raw = np.asarray(raw, dtype=float)
    if raw.shape[0] < 2:
        raise InsufficientData("Standardizing scores needs at least 2 rows")
    means = raw.mean(axis=0)
    sds = raw.std(axis=0, ddof=1)
    flat = ~(sds > 0)
    if flat.any():
        logger.warning(f"Score columns with zero spread keep unit scale: {np.flatnonzero(flat).tolist()}")
        sds = np.where(flat, 1.0, sds)
    standardization = Standardization(means=means, sds=sds)
    return standardization, standardization.apply(raw)


def _check_curves(curves: np.ndarray, minimum: int = 2) -> np.ndarray:
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 2:
        raise DataError("Curves must be an n x G matrix")
    if curves.shape[0] < minimum:
        raise InsufficientData(f"FPCA needs at least {minimum} curves, got {curves.shape[0]}")
    if not np.all(np.isfinite(curves)):
        raise DataError("Curves contain non-finite values")
    return curves


def _decompose(
    curves: np.ndarray, grid: np.ndarray, weights: np.ndarray, max_components: Optional[int]
) -> EigenBasis:
    n, width = curves.shape
    mean = curves.mean(axis=0)
    root_w = np.sqrt(weights)
    weighted = (curves - mean) * root_w / np.sqrt(n - 1)

    cap = min(n - 1, width)
    n_components = cap if max_components is None else min(int(max_components), width)
    if n_components < 1:
        raise InsufficientData("No principal component can be estimated")

    if n_components <= min(n, width):
        _, singular_values, vt = np.linalg.svd(weighted, full_matrices=False)
        eigenvalues = singular_values[:n_components] ** 2
        vectors = vt[:n_components]
    else:
        # more components than the sample rank, the tail carries zero variance
        values, columns = np.linalg.eigh(weighted.T @ weighted)
        order = np.argsort(values)[::-1][:n_components]
        eigenvalues = values[order]
        vectors = columns[:, order].T

    eigenfunctions = vectors / root_w
    largest = np.argmax(np.abs(eigenfunctions), axis=1)
    signs = np.sign(eigenfunctions[np.arange(n_components), largest])
    eigenfunctions = eigenfunctions * np.where(signs == 0, 1.0, signs)[:, None]

    return EigenBasis(
        grid=grid,
        mean=mean,
        eigenfunctions=eigenfunctions,
        eigenvalues=np.clip(eigenvalues, 0.0, None),
        noise_var=0.0,
        quadrature_weights=np.asarray(weights, dtype=float),
    )


def _noise_variance(centered: np.ndarray, grid: np.ndarray) -> float:
    """
    Average gap between the raw covariance diagonal and a local quadratic-in-lag fit of the
    neighbouring off-diagonal entries (lags 1 and 2 on both sides), floored at zero.
    """
    n, n_points = centered.shape
    if n_points < 5:
        return 0.0

    def cross(lag: int) -> np.ndarray:
        return np.einsum("ij,ij->j", centered[:, :-lag], centered[:, lag:]) / (n - 1)

    diagonal = np.einsum("ij,ij->j", centered, centered) / (n - 1)
    lag1, lag2 = cross(1), cross(2)

    j = np.arange(2, n_points - 2)
    values = np.stack([lag1[j - 1], lag1[j], lag2[j - 2], lag2[j]])
    h2 = np.stack(
        [
            (grid[j] - grid[j - 1]) ** 2,
            (grid[j + 1] - grid[j]) ** 2,
            (grid[j] - grid[j - 2]) ** 2,
            (grid[j + 2] - grid[j]) ** 2,
        ]
    )

    s_h, s_hh = h2.sum(axis=0), (h2**2).sum(axis=0)
    s_v, s_hv = values.sum(axis=0), (h2 * values).sum(axis=0)
    determinant = 4 * s_hh - s_h**2
    solvable = determinant > 0
    intercept = (s_hh * s_v - s_h * s_hv) / np.where(solvable, determinant, 1.0)
    smoothed = np.where(solvable, intercept, s_v / 4)

    return max(0.0, float(np.mean(diagonal[j] - smoothed)))
