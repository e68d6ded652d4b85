from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from fusion_prognostics.clustering.model import KnnConfig, SensorClustering
from fusion_prognostics.fda.model import ClusterBases, EigenBasis, FeatureMatrix, MfpcaScores
from fusion_prognostics.mixture.model import FitResult
from fusion_prognostics.signals.model import SignalDataset, SmoothingConfig, StandardizedTtf


def _default_lambda_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in np.round(np.linspace(0.005, 0.4, 20), 10))


class CvConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    folds: int = Field(default=5, ge=2)
    lambda_grid: tuple[float, ...] = Field(default_factory=_default_lambda_grid)
    alpha_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    seed: int = 0

    @field_validator("lambda_grid")
    @classmethod
    def _lambdas(cls, grid):
        if not grid or any(v < 0 for v in grid):
            raise ValueError("lambda grid must be a nonempty list of nonnegative values")
        return grid

    @field_validator("alpha_grid")
    @classmethod
    def _alphas(cls, grid):
        if not grid or any(not 0 <= v <= 1 for v in grid):
            raise ValueError("alpha grid must be a nonempty list of values in [0, 1]")
        return grid


class OnlineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    smoothing: SmoothingConfig = SmoothingConfig()
    knn: KnnConfig = KnnConfig()
    fve: float = Field(default=0.95, gt=0.0, le=1.0)
    lasso_path_length: int = Field(default=50, ge=2)
    lasso_path_ratio: float = Field(default=1e-4, gt=0.0, lt=1.0)
    weight_epsilon: float = Field(default=1e-8, gt=0.0)
    # below this many surviving units of the diagnosed mode the regression uses every survivor
    minimum_mode_units: int = Field(default=3, ge=3)
    # t* is moved back to the last time with this many survivors
    minimum_survivors: int = Field(default=5, ge=2)


@dataclass(frozen=True)
class OfflineModel:
    dataset: SignalDataset
    K: int
    sensor_clustering: SensorClustering
    cluster_bases: ClusterBases
    features: FeatureMatrix
    ttf: StandardizedTtf
    fit: FitResult

    @property
    def labels(self) -> np.ndarray:
        return self.fit.hard_labels

    @property
    def selected_sensors(self) -> list[list[int]]:
        return [self.fit.selection.selected(k) for k in range(self.K)]

    @property
    def union_sensors(self) -> list[int]:
        return self.fit.selection.union()

    @property
    def degenerate(self) -> bool:
        return self.fit.degenerate


@dataclass(frozen=True)
class ModeBasis:
    mode: int
    sensors: Sequence[int]
    # indices into the surviving units
    members: np.ndarray
    basis: EigenBasis
    scores: MfpcaScores
    fallback: bool = False


@dataclass(frozen=True)
class OnlineContext:
    t_star: float
    n_points: int
    surviving: np.ndarray
    modes: np.ndarray
    ttf: np.ndarray
    union_sensors: Sequence[int]
    union_basis: EigenBasis
    union_scores: MfpcaScores
    mode_bases: dict
    knn: KnnConfig

    @property
    def n_surviving(self) -> int:
        return int(self.surviving.size)


@dataclass(frozen=True)
class RegressionModel:
    mode: int
    mode_basis: ModeBasis
    n_components: int
    intercept: float
    coefficients: np.ndarray
    weights: np.ndarray
    lasso_lambda: float
    ttf: StandardizedTtf
    fallback: bool = False


@dataclass(frozen=True)
class RulPrediction:
    unit_id: str
    t_star: float
    mode: int
    rul: float
    clamped: bool = False
    fallback: bool = False
    # t* of the context when too few training units survive the unit's own t*
    context_t_star: Optional[float] = None
    union_scores: tuple = field(default_factory=tuple)
    mode_scores: tuple = field(default_factory=tuple)

    @property
    def estimated_life(self) -> float:
        return self.t_star + self.rul

    def record(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "t_star": self.t_star,
            "mode": self.mode,
            "rul": self.rul,
            "estimated_life": self.estimated_life,
            "clamped": self.clamped,
            "fallback": self.fallback,
            "context_t_star": self.t_star if self.context_t_star is None else self.context_t_star,
        }


@dataclass(frozen=True)
class CvResult:
    best_lambda: float
    best_alpha: float
    # one row per (lambda, alpha) with the mean held-out MSE and fold counts
    table: pd.DataFrame
