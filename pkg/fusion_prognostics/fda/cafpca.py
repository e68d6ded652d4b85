import logging

import numpy as np

from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.fda.fpca import fit_fpca, pace_scores, select_fve, standardize_columns, trapezoid_weights
from fusion_prognostics.fda.model import ClusterBases, EigenBasis, FeatureMatrix, Standardization
from fusion_prognostics.signals.model import SignalDataset

logger = logging.getLogger("fusion_prognostics.fda")


def fit_cafpca(
    dataset: SignalDataset,
    sensorwise_labels: np.ndarray,
    K: int,
    fve: float = 0.95,
) -> tuple[ClusterBases, FeatureMatrix]:
    """
    Cluster-aware FPCA: every sensor is decomposed separately inside each of its K-means clusters,
    and a system is scored against the basis of its own cluster.

    All clusters of a sensor contribute q_p = max_k q_p^k columns. A cluster whose own sample
    supports fewer components gets zero-variance components appended, so its tail scores are 0.
    """
    labels = np.asarray(sensorwise_labels, dtype=int)
    if labels.shape != (dataset.n_systems, dataset.n_sensors):
        raise DataError(
            f"Sensor-wise labels have shape {labels.shape}, expected {(dataset.n_systems, dataset.n_sensors)}"
        )
    if np.any((labels < 0) | (labels >= K)):
        raise DataError(f"Sensor-wise labels must lie in [0, {K})")

    grid = dataset.time_grid
    weights = trapezoid_weights(grid)
    bases: dict[tuple[int, int], EigenBasis] = {}
    retained: list[int] = []
    merged_labels = labels.copy()
    blocks: list[np.ndarray] = []

    for p in range(dataset.n_sensors):
        curves = dataset.sensor_curves(p)
        merged_labels[:, p] = _merge_small_clusters(curves, labels[:, p], weights, dataset.sensor_ids[p])
        clusters = np.unique(merged_labels[:, p])

        fitted = {k: fit_fpca(curves[merged_labels[:, p] == k], grid) for k in clusters}
        q_p = max(_retained_components(basis, fve, dataset.sensor_ids[p], k) for k, basis in fitted.items())
        for k in clusters:
            if fitted[k].n_components < q_p:
                fitted[k] = fit_fpca(curves[merged_labels[:, p] == k], grid, max_components=q_p)
            bases[(p, int(k))] = fitted[k].truncated(q_p)

        scores = np.empty((dataset.n_systems, q_p))
        for k in clusters:
            members = merged_labels[:, p] == k
            scores[members] = pace_scores(bases[(p, int(k))], curves[members])
        retained.append(q_p)
        blocks.append(scores)

    standardization, x = standardize_columns(np.hstack(blocks))
    cluster_bases = ClusterBases(
        sensor_ids=dataset.sensor_ids, bases=bases, retained=tuple(retained), labels=merged_labels
    )
    logger.debug(f"CA-FPCA retained {retained} components for sensors {list(dataset.sensor_ids)}")
    return cluster_bases, FeatureMatrix(
        x=x,
        group_offsets=_group_offsets(retained),
        standardization=standardization,
        sensor_ids=dataset.sensor_ids,
    )


def transform_cafpca(
    cluster_bases: ClusterBases,
    standardization: Standardization,
    curves: np.ndarray,
    sensorwise_labels: np.ndarray,
) -> FeatureMatrix:
    """
    Features of units outside the fit. `curves` is n x P x G on the basis grid and the labels are
    the units' sensor-wise clusters; a label whose cell was merged away falls back to the cluster
    with the closest mean curve.
    """
    curves = np.asarray(curves, dtype=float)
    labels = np.asarray(sensorwise_labels, dtype=int)
    n_sensors = len(cluster_bases.sensor_ids)
    if curves.ndim != 3 or curves.shape[1] != n_sensors:
        raise DataError(f"Curves must be an n x {n_sensors} x G array")
    if labels.shape != curves.shape[:2]:
        raise DataError(f"Sensor-wise labels have shape {labels.shape}, expected {curves.shape[:2]}")

    blocks = []
    for p in range(n_sensors):
        scores = np.empty((curves.shape[0], cluster_bases.retained[p]))
        for i in range(curves.shape[0]):
            basis = cluster_bases.bases.get((p, int(labels[i, p])))
            if basis is None:
                basis = _closest_basis(cluster_bases, p, curves[i, p])
            n_points = basis.grid.size
            if curves.shape[2] < n_points:
                raise InsufficientData(f"Curves cover {curves.shape[2]} grid points, the basis needs {n_points}")
            scores[i] = pace_scores(basis, curves[i, p, :n_points])[0]
        blocks.append(scores)

    return FeatureMatrix(
        x=standardization.apply(np.hstack(blocks)),
        group_offsets=_group_offsets(cluster_bases.retained),
        standardization=standardization,
        sensor_ids=cluster_bases.sensor_ids,
    )


def _merge_small_clusters(curves: np.ndarray, labels: np.ndarray, weights: np.ndarray, sensor_id: str) -> np.ndarray:
    labels = labels.copy()
    clusters, counts = np.unique(labels, return_counts=True)
    small = clusters[counts < 2]
    large = clusters[counts >= 2]
    if small.size == 0:
        return labels
    if large.size == 0:
        logger.warning(f"Sensor {sensor_id}: every cluster has fewer than 2 members, pooling them")
        return np.full_like(labels, clusters[0])

    means = {k: curves[labels == k].mean(axis=0) for k in clusters}
    for k in small:
        distances = [np.sum(weights * (means[k] - means[other]) ** 2) for other in large]
        target = large[int(np.argmin(distances))]
        logger.warning(f"Sensor {sensor_id}: cluster {k} has fewer than 2 members, merged into cluster {target}")
        labels[labels == k] = target
    return labels


def _retained_components(basis: EigenBasis, fve: float, sensor_id: str, cluster: int) -> int:
    try:
        return select_fve(basis.eigenvalues, fve)
    except DataError:
        logger.warning(f"Sensor {sensor_id}, cluster {cluster}: curves carry no variance, retaining 1 component")
        return 1


def _closest_basis(cluster_bases: ClusterBases, sensor: int, curve: np.ndarray) -> EigenBasis:
    candidates = [cluster_bases.bases[(sensor, k)] for k in cluster_bases.clusters_of(sensor)]
    distances = [
        np.sum(basis.quadrature_weights * (curve[: basis.grid.size] - basis.mean) ** 2) for basis in candidates
    ]
    return candidates[int(np.argmin(distances))]


def _group_offsets(retained) -> list[tuple[int, int]]:
    stops = np.cumsum(retained)
    return [(int(stop - q), int(stop)) for stop, q in zip(stops, retained)]
