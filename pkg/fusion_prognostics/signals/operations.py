import logging
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.signals.model import SignalDataset, StandardizedTtf, SystemRecord

logger = logging.getLogger("fusion_prognostics.signals")

GRID_TOLERANCE = 1e-9


def grid_points_through(grid: np.ndarray, t: float) -> int:
    """Number of leading grid points with time <= t."""
    return int(np.searchsorted(grid, t + GRID_TOLERANCE * max(1.0, abs(t)), side="right"))


def truncate_to_min_ttf(dataset: SignalDataset) -> SignalDataset:
    ttf = dataset.ttf
    if np.any(np.isnan(ttf)):
        raise DataError("Truncation needs the time-to-failure of every system")

    t_min = float(ttf.min())
    n_points = grid_points_through(dataset.time_grid, t_min)
    if n_points < 3:
        raise InsufficientData(
            f"Only {n_points} grid points survive truncation at the minimum failure time {t_min}",
            truncated_at=t_min,
        )

    systems = [
        SystemRecord(id=s.id, values=s.observed(n_points), ttf=s.ttf, observed_through=n_points)
        for s in dataset.systems
    ]
    return SignalDataset(
        sensor_ids=dataset.sensor_ids,
        time_grid=dataset.time_grid[:n_points],
        systems=systems,
        truncated_at=t_min,
    )


def standardize_ln_ttf(dataset: SignalDataset) -> StandardizedTtf:
    return standardize_ln_values(dataset.ttf)


def standardize_ln_values(ttf: np.ndarray) -> StandardizedTtf:
    ttf = np.asarray(ttf, dtype=float)
    if ttf.size < 2:
        raise InsufficientData("Standardizing ln TTF needs at least 2 systems")
    if np.any(np.isnan(ttf)):
        raise DataError("Standardizing ln TTF needs the time-to-failure of every system")
    if np.any(ttf <= 0):
        raise DataError("Time-to-failure must be positive")

    ln_ttf = np.log(ttf)
    ln_mean = float(ln_ttf.mean())
    ln_var = float(ln_ttf.var(ddof=1))
    if not ln_var > 0:
        raise DataError("ln TTF has zero variance, all failure times are identical")

    return StandardizedTtf(y=(ln_ttf - ln_mean) / ln_var, ln_mean=ln_mean, ln_var=ln_var)


def restrict(
    dataset: SignalDataset,
    systems: Optional[Sequence[int]] = None,
    sensors: Optional[Sequence[int]] = None,
    n_points: Optional[int] = None,
) -> SignalDataset:
    system_index = range(dataset.n_systems) if systems is None else list(systems)
    sensor_index = list(range(dataset.n_sensors)) if sensors is None else list(sensors)
    n_points = dataset.n_points if n_points is None else int(n_points)

    records = []
    for i in system_index:
        s = dataset.systems[i]
        observed = min(s.observed_through, n_points)
        records.append(
            SystemRecord(id=s.id, values=s.values[np.ix_(sensor_index, np.arange(n_points))], ttf=s.ttf,
                         observed_through=observed)
        )

    return SignalDataset(
        sensor_ids=[dataset.sensor_ids[p] for p in sensor_index],
        time_grid=dataset.time_grid[:n_points],
        systems=records,
        truncated_at=dataset.truncated_at if n_points == dataset.n_points else None,
    )


def surviving_systems(dataset: SignalDataset, t_star: float) -> np.ndarray:
    """Indices of the systems that fail strictly after t_star."""
    return np.flatnonzero(dataset.ttf > t_star)


def zscore_sensors(train: SignalDataset, *others: SignalDataset) -> tuple[list[SignalDataset], np.ndarray, np.ndarray]:
    """Normalizes every sensor with the mean and standard deviation of its training readings."""
    values = train.values
    means = np.nanmean(values, axis=(0, 2))
    sds = np.nanstd(values, axis=(0, 2), ddof=1)
    flat = ~(sds > 0)
    if flat.any():
        logger.warning(f"Sensors with constant training readings keep unit scale: {np.flatnonzero(flat).tolist()}")
        sds = np.where(flat, 1.0, sds)

    normalized = [_scale(d, means, sds) for d in (train, *others)]
    return normalized, means, sds


def _scale(dataset: SignalDataset, means: np.ndarray, sds: np.ndarray) -> SignalDataset:
    systems = [
        replace(s, values=(s.values - means[:, None]) / sds[:, None]) for s in dataset.systems
    ]
    return replace(dataset, systems=systems)
