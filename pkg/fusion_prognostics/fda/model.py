from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class EigenBasis:
    """
    Mean, eigenfunctions and eigenvalues of a curve ensemble's covariance.

    Multivariate bases concatenate the sensors block by block, so `mean`, the rows of
    `eigenfunctions` and `quadrature_weights` have length n_blocks * len(grid).
    """

    grid: np.ndarray
    mean: np.ndarray
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    noise_var: float
    quadrature_weights: np.ndarray
    sensor_ids: Optional[Sequence[str]] = None

    @property
    def n_components(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def n_blocks(self) -> int:
        return int(self.mean.size // self.grid.size)

    def truncated(self, n_components: int) -> "EigenBasis":
        return EigenBasis(
            grid=self.grid,
            mean=self.mean,
            eigenfunctions=self.eigenfunctions[:n_components],
            eigenvalues=self.eigenvalues[:n_components],
            noise_var=self.noise_var,
            quadrature_weights=self.quadrature_weights,
            sensor_ids=self.sensor_ids,
        )


@dataclass(frozen=True)
class Standardization:
    means: np.ndarray
    sds: np.ndarray

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.means) / self.sds


@dataclass(frozen=True)
class ClusterBases:
    sensor_ids: Sequence[str]
    # (sensor index, cluster id) -> basis fitted on that cell's signals
    bases: dict
    # q_p per sensor
    retained: Sequence[int]
    # N x P cluster ids after merging degenerate cells
    labels: np.ndarray

    def clusters_of(self, sensor: int) -> list[int]:
        return sorted(k for p, k in self.bases if p == sensor)


@dataclass(frozen=True)
class FeatureMatrix:
    x: np.ndarray
    # per-sensor (start, stop) column ranges
    group_offsets: Sequence[tuple[int, int]]
    standardization: Standardization
    sensor_ids: Sequence[str]

    @property
    def group_sizes(self) -> list[int]:
        return [stop - start for start, stop in self.group_offsets]

    @property
    def n_groups(self) -> int:
        return len(self.group_offsets)

    def rows(self, index) -> "FeatureMatrix":
        return FeatureMatrix(
            x=self.x[index],
            group_offsets=self.group_offsets,
            standardization=self.standardization,
            sensor_ids=self.sensor_ids,
        )


@dataclass(frozen=True)
class MfpcaScores:
    zeta: np.ndarray
    standardization: Standardization

    @property
    def H(self) -> int:
        return int(self.zeta.shape[1])
