import logging
import math
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.neighbors import NearestNeighbors

from fusion_prognostics.clustering.model import KmeansModel, KnnConfig, SensorClustering
from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.fda.fpca import fit_fpca, pace_scores, select_fve, standardize_columns
from fusion_prognostics.signals.model import SignalDataset

logger = logging.getLogger("fusion_prognostics.clustering")


def kmeans(points: np.ndarray, K: int, seed: int = 0, restarts: int = 10, max_iterations: int = 300) -> KmeansModel:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if K < 1:
        raise DataError(f"K must be positive, got {K}")
    if points.shape[0] < K:
        raise InsufficientData(f"K-means with K={K} needs at least {K} points, got {points.shape[0]}")
    if not np.all(np.isfinite(points)):
        raise DataError("K-means points contain non-finite values")

    estimator = KMeans(
        n_clusters=K,
        init="k-means++",
        n_init=restarts,
        max_iter=max_iterations,
        tol=0.0,
        algorithm="lloyd",
        random_state=seed,
    ).fit(points)

    # lexicographic order of the centroid coordinates names the clusters
    centroids = estimator.cluster_centers_[np.lexsort(estimator.cluster_centers_.T[::-1])]
    model = KmeansModel(centroids=centroids, labels=np.zeros(points.shape[0], dtype=int), inertia=0.0, seed=seed)
    labels = model.assign(points)
    inertia = float(((points - centroids[labels]) ** 2).sum())
    if np.unique(labels).size < K:
        logger.warning(f"K-means left {K - np.unique(labels).size} of {K} clusters empty")
    return KmeansModel(centroids=centroids, labels=labels, inertia=inertia, seed=seed)


def neighbor_count(n: int, cfg: KnnConfig) -> int:
    return min(n, max(cfg.minimum_neighbors, math.ceil(cfg.neighbor_fraction * n - 1e-9)))


def knn_diagnose(
    train_scores: np.ndarray,
    train_modes: np.ndarray,
    test_score: np.ndarray,
    cfg: Optional[KnnConfig] = None,
) -> int:
    cfg = cfg or KnnConfig()
    train_scores = np.asarray(train_scores, dtype=float)
    if train_scores.ndim == 1:
        train_scores = train_scores[:, None]
    train_modes = np.asarray(train_modes, dtype=int)
    if train_scores.shape[0] == 0:
        raise InsufficientData("Diagnosis needs at least one training system")
    if train_modes.shape[0] != train_scores.shape[0]:
        raise DataError("Training scores and modes differ in length")

    k = neighbor_count(train_scores.shape[0], cfg)
    neighbors = NearestNeighbors(n_neighbors=k).fit(train_scores)
    _, index = neighbors.kneighbors(np.asarray(test_score, dtype=float).reshape(1, -1))
    votes = train_modes[index[0]]

    modes, counts = np.unique(votes, return_counts=True)
    tied = set(modes[counts == counts.max()].tolist())
    # neighbours come sorted by distance
    return int(next(mode for mode in votes if mode in tied))


def align_labels(pred: np.ndarray, truth: np.ndarray, K: int) -> tuple[np.ndarray, float]:
    """
    Relabeling of `pred` that maximizes agreement with `truth`. The returned permutation maps a
    predicted label to its truth label.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise DataError(f"Label vectors differ in length: {pred.size} and {truth.size}")
    if pred.size == 0:
        raise InsufficientData("Aligning labels needs at least one system")
    for labels in (pred, truth):
        if np.any((labels < 0) | (labels >= K)):
            raise DataError(f"Labels must lie in [0, {K})")

    agreement = np.zeros((K, K), dtype=int)
    np.add.at(agreement, (pred, truth), 1)
    rows, columns = linear_sum_assignment(agreement, maximize=True)
    permutation = np.empty(K, dtype=int)
    permutation[rows] = columns
    return permutation, float(agreement[rows, columns].sum() / pred.size)


def per_mode_accuracy(pred: np.ndarray, truth: np.ndarray, K: int) -> np.ndarray:
    """Aligned accuracy within each true mode, NaN for modes without systems."""
    permutation, _ = align_labels(pred, truth, K)
    aligned = permutation[np.asarray(pred, dtype=int)]
    truth = np.asarray(truth, dtype=int)
    accuracy = np.full(K, np.nan)
    for k in range(K):
        members = truth == k
        if members.any():
            accuracy[k] = float(np.mean(aligned[members] == k))
    return accuracy


def cluster_sensors(
    dataset: SignalDataset, K: int, fve: float = 0.95, seed: int = 0, restarts: int = 10, max_iterations: int = 300
) -> SensorClustering:
    """Labels every sensor separately by K-means on the FPC scores of that sensor."""
    bases, models = [], []
    for p in range(dataset.n_sensors):
        basis = fit_fpca(dataset.sensor_curves(p), dataset.time_grid)
        basis = basis.truncated(_retained(basis.eigenvalues, fve))
        scores = pace_scores(basis, dataset.sensor_curves(p))
        bases.append(basis)
        models.append(kmeans(scores, K, seed=seed, restarts=restarts, max_iterations=max_iterations))
    return SensorClustering(sensor_ids=dataset.sensor_ids, bases=tuple(bases), models=tuple(models))


def assign_sensors(clustering: SensorClustering, curves: np.ndarray) -> np.ndarray:
    """Sensor-wise cluster labels of units outside the fit, from n x P x G' curves with G' >= the fitted grid."""
    curves = np.asarray(curves, dtype=float)
    labels = np.empty(curves.shape[:2], dtype=int)
    for p, (basis, model) in enumerate(zip(clustering.bases, clustering.models)):
        n_points = basis.grid.size
        if curves.shape[2] < n_points:
            raise InsufficientData(f"Curves cover {curves.shape[2]} grid points, the sensor basis needs {n_points}")
        labels[:, p] = model.assign(pace_scores(basis, curves[:, p, :n_points]))
    return labels


def initial_labels_from_pooled_scores(
    dataset: SignalDataset, K: int, fve: float = 0.95, seed: int = 0, restarts: int = 10, max_iterations: int = 300
) -> np.ndarray:
    """
    Starting failure-mode labels: K-means on the FPC scores of all sensors side by side. Each
    sensor's scores are standardized first so no sensor dominates through its units.
    """
    blocks = []
    for p in range(dataset.n_sensors):
        basis = fit_fpca(dataset.sensor_curves(p), dataset.time_grid)
        basis = basis.truncated(_retained(basis.eigenvalues, fve))
        _, standardized = standardize_columns(pace_scores(basis, dataset.sensor_curves(p)))
        blocks.append(standardized)
    return kmeans(np.hstack(blocks), K, seed=seed, restarts=restarts, max_iterations=max_iterations).labels


def _retained(eigenvalues: np.ndarray, fve: float) -> int:
    try:
        return select_fve(eigenvalues, fve)
    except DataError:
        return 1
