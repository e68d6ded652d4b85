from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from fusion_prognostics.exceptions import DataError, InsufficientData


@dataclass(frozen=True)
class SystemRecord:
    id: str
    # P x G readings on the dataset grid, NaN where the unit was not observed
    values: np.ndarray
    # Absent for online test units with unknown failure time
    ttf: Optional[float] = None
    observed_through: int = field(default=-1)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"System {self.id}: values must be a P x G matrix", system_id=self.id)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "id", str(self.id))

        if self.observed_through < 0:
            object.__setattr__(self, "observed_through", _leading_finite_columns(values))
        if np.any(~np.isfinite(values[:, : self.observed_through])):
            raise DataError(f"System {self.id}: non-finite readings inside the observed range", system_id=self.id)

        if self.ttf is not None and not self.ttf > 0:
            raise DataError(f"System {self.id}: time-to-failure must be positive, got {self.ttf}", system_id=self.id)

    def observed(self, n_points: int) -> np.ndarray:
        if n_points > self.observed_through:
            raise InsufficientData(
                f"System {self.id} is observed through {self.observed_through} grid points, {n_points} requested",
                system_id=self.id,
            )
        return self.values[:, :n_points]


@dataclass(frozen=True)
class SignalDataset:
    sensor_ids: Sequence[str]
    time_grid: np.ndarray
    systems: Sequence[SystemRecord]
    truncated_at: Optional[float] = None

    def __post_init__(self):
        grid = np.asarray(self.time_grid, dtype=float)
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "sensor_ids", tuple(str(s) for s in self.sensor_ids))
        object.__setattr__(self, "systems", tuple(self.systems))

        if grid.ndim != 1 or len(grid) < 3:
            raise InsufficientData(f"Time grid needs at least 3 points, got {grid.size}")
        if np.any(np.diff(grid) <= 0):
            raise DataError("Time grid must be strictly increasing")
        if len(self.sensor_ids) < 1:
            raise DataError("Dataset needs at least one sensor")
        if len(self.systems) < 2:
            raise InsufficientData(f"Dataset needs at least 2 systems, got {len(self.systems)}")

        shape = (len(self.sensor_ids), len(grid))
        for system in self.systems:
            if system.values.shape != shape:
                raise DataError(
                    f"System {system.id}: values have shape {system.values.shape}, expected {shape}",
                    system_id=system.id,
                )

    @property
    def n_systems(self) -> int:
        return len(self.systems)

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_ids)

    @property
    def n_points(self) -> int:
        return len(self.time_grid)

    @property
    def system_ids(self) -> list[str]:
        return [system.id for system in self.systems]

    @cached_property
    def ttf(self) -> np.ndarray:
        return np.array([np.nan if s.ttf is None else s.ttf for s in self.systems], dtype=float)

    @cached_property
    def values(self) -> np.ndarray:
        """N x P x G array of readings."""
        return np.stack([system.values for system in self.systems])

    def sensor_curves(self, sensor: int) -> np.ndarray:
        """N x G matrix of one sensor's readings."""
        return self.values[:, sensor, :]

    def sensor_index(self, sensor_id: str) -> int:
        try:
            return self.sensor_ids.index(str(sensor_id))
        except ValueError:
            raise DataError(f"Unknown sensor {sensor_id}", sensor_id=sensor_id)


@dataclass(frozen=True)
class StandardizedTtf:
    y: np.ndarray
    ln_mean: float
    # Sample variance of ln TTF (divisor N - 1). The standardization divides by it, not by its root.
    ln_var: float

    def transform(self, ttf) -> np.ndarray:
        return (np.log(np.asarray(ttf, dtype=float)) - self.ln_mean) / self.ln_var

    def inverse(self, y) -> np.ndarray:
        return np.exp(np.asarray(y, dtype=float) * self.ln_var + self.ln_mean)


class SmoothingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Fraction of the points used as the local window
    bandwidth: float = Field(default=0.5, gt=0.0, le=1.0)
    robust_iterations: int = Field(default=5, ge=0)
    polynomial_order: Literal[2] = 2


def _leading_finite_columns(values: np.ndarray) -> int:
    finite = np.all(np.isfinite(values), axis=0)
    if finite.all():
        return values.shape[1]
    return int(np.argmin(finite))
