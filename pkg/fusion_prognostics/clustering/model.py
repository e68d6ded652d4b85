from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fusion_prognostics.fda.model import EigenBasis


@dataclass(frozen=True)
class KmeansModel:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    seed: int

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    def assign(self, points: np.ndarray) -> np.ndarray:
        """Nearest centroid under Euclidean distance, ties going to the lowest index."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        distances = ((points[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(distances, axis=1)


@dataclass(frozen=True)
class SensorClustering:
    """Per-sensor pooled FPCA bases and the K-means models fitted on their retained scores."""

    sensor_ids: Sequence[str]
    bases: Sequence[EigenBasis]
    models: Sequence[KmeansModel]

    @property
    def labels(self) -> np.ndarray:
        """N x P sensor-wise cluster labels of the training systems."""
        return np.column_stack([model.labels for model in self.models])


class KnnConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    neighbor_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    minimum_neighbors: int = Field(default=1, ge=1)


class KmeansConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    restarts: int = Field(default=10, ge=1)
    max_iterations: int = Field(default=300, ge=1)
