from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fusion_prognostics.signals.model import SignalDataset
from fusion_prognostics.signals.operations import restrict, truncate_to_min_ttf

Interval = tuple[float, float]

REGIMES: dict[str, Interval] = {
    "snr_2_5": (2.0, 5.0),
    "snr_5_8": (5.0, 8.0),
    "snr_8_11": (8.0, 11.0),
}


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mu: tuple[float, ...] = (1.0, 0.8)
    threshold: tuple[float, ...] = (2.0, 1.5)
    # 1-based sensor numbers carrying the failure mode's degradation
    informative: tuple[tuple[int, ...], ...] = ((5, 12, 16, 19), (3, 7, 9, 19))
    n_sensors: int = Field(default=20, ge=1)
    n_per_mode: int = Field(default=200, ge=3)
    train_per_mode: int = Field(default=160, ge=2)
    theta_sd: float = Field(default=0.1, gt=0.0)
    snr_informative: Interval = (2.0, 5.0)
    snr_noninformative: Interval = (1.0, 3.0)
    rho_informative: Interval = (0.80, 0.99)
    rho_noninformative: Interval = (0.1, 0.6)
    grid_start: float = Field(default=0.01, gt=0.0, lt=1.0)
    grid_stop: float = Field(default=0.99, gt=0.0, lt=1.0)
    grid_points: int = Field(default=100, ge=3)
    # printed: N(mu (1 - sqrt(1 - rho)), sd^2); gaussian: N(mu + rho (theta - mu), sd^2 (1 - rho^2))
    theta_coupling: Literal["printed", "gaussian"] = "printed"
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        K = len(self.mu)
        if K < 1 or len(self.threshold) != K or len(self.informative) != K:
            raise ValueError("mu, threshold and informative must list one entry per failure mode")
        if any(m <= 0 for m in self.mu) or any(d <= 0 for d in self.threshold):
            raise ValueError("degradation rates and thresholds must be positive")
        for sensors in self.informative:
            if any(not 1 <= p <= self.n_sensors for p in sensors):
                raise ValueError(f"informative sensors must lie in [1, {self.n_sensors}]")
        for name in ("snr_informative", "snr_noninformative", "rho_informative", "rho_noninformative"):
            low, high = getattr(self, name)
            if not low <= high:
                raise ValueError(f"{name} must be an ordered interval")
        if not (0 < self.snr_informative[0] and 0 < self.snr_noninformative[0]):
            raise ValueError("signal-to-noise ratios must be positive")
        for name in ("rho_informative", "rho_noninformative"):
            low, high = getattr(self, name)
            if not (0 <= low and high < 1):
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.grid_start < self.grid_stop:
            raise ValueError("grid_start must precede grid_stop")
        if not self.train_per_mode < self.n_per_mode:
            raise ValueError("train_per_mode must leave test systems")
        return self

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.grid_start, self.grid_stop, self.grid_points)

    def regime(self, name: str) -> "SimConfig":
        if name not in REGIMES:
            raise ValueError(f"Unknown SNR regime {name}, expected one of {sorted(REGIMES)}")
        return self.model_copy(update={"snr_informative": REGIMES[name]})

    def is_informative(self, mode: int, sensor: int) -> bool:
        """`sensor` is 0-based."""
        return sensor + 1 in self.informative[mode]


@dataclass(frozen=True)
class SimulationTruth:
    system_ids: np.ndarray
    modes: np.ndarray
    theta: np.ndarray
    ttf: np.ndarray
    train: np.ndarray
    # K x P per-mode sensor draws
    sensor_rho: np.ndarray
    sensor_snr: np.ndarray
    redraws: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "system_id": self.system_ids,
                "mode": self.modes,
                "theta": self.theta,
                "ttf": self.ttf,
                "split": np.where(self.train, "train", "test"),
            }
        )


@dataclass(frozen=True)
class SimulatedStudy:
    config: SimConfig
    # every generated system, readings NaN after failure
    dataset: SignalDataset
    truth: SimulationTruth

    @property
    def train(self) -> SignalDataset:
        return restrict(self.dataset, systems=np.flatnonzero(self.truth.train))

    @property
    def test(self) -> SignalDataset:
        return restrict(self.dataset, systems=np.flatnonzero(~self.truth.train))

    @property
    def offline_train(self) -> SignalDataset:
        return truncate_to_min_ttf(self.train)

    @property
    def train_modes(self) -> np.ndarray:
        return self.truth.modes[self.truth.train]

    @property
    def test_modes(self) -> np.ndarray:
        return self.truth.modes[~self.truth.train]
