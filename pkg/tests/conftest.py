from pathlib import Path

import numpy as np
import pytest

from fusion_prognostics.signals.model import SignalDataset, SystemRecord
from fusion_prognostics.simulation.generator import gen_dataset
from fusion_prognostics.simulation.model import SimConfig

ENVIRONMENT_KEYS = (
    "FUSION_DEBUG",
    "FUSION_STORAGE_PATH",
    "FUSION_STORAGE_LOCK_NAME",
    "FUSION_LOGGING_LEVEL",
    "FUSION_LOGGING_FORMAT",
    "FUSION_LOGGING_PATH",
)


def path_to_current_file_dir() -> Path:
    return Path(__file__).parent


def make_dataset(values: np.ndarray, ttf=None, grid=None, sensor_ids=None) -> SignalDataset:
    """Dataset from an N x P x G array, NaN marking unobserved readings."""
    values = np.asarray(values, dtype=float)
    n, n_sensors, n_points = values.shape
    grid = np.linspace(0.1, 1.0, n_points) if grid is None else grid
    ttf = [None] * n if ttf is None else ttf
    sensor_ids = [str(p + 1) for p in range(n_sensors)] if sensor_ids is None else sensor_ids
    systems = [SystemRecord(id=f"u{i + 1}", values=values[i], ttf=ttf[i]) for i in range(n)]
    return SignalDataset(sensor_ids=sensor_ids, time_grid=grid, systems=systems)


@pytest.fixture
def clean_environment(monkeypatch):
    # setenv first so that teardown removes whatever a .env file adds
    for key in ENVIRONMENT_KEYS:
        monkeypatch.setenv(key, "")
        monkeypatch.delenv(key)
    yield


@pytest.fixture(scope="session")
def small_config() -> SimConfig:
    return SimConfig(
        n_sensors=3,
        informative=((1, 2), (2, 3)),
        n_per_mode=12,
        train_per_mode=9,
        grid_points=40,
        snr_informative=(8.0, 11.0),
        snr_noninformative=(8.0, 11.0),
        seed=3,
    )


@pytest.fixture(scope="session")
def small_study(small_config):
    return gen_dataset(small_config)
