import logging
from typing import Optional

import numpy as np
import pandas as pd

from fusion_prognostics.exceptions import IngestionError
from fusion_prognostics.signals.model import SignalDataset, SystemRecord

logger = logging.getLogger("fusion_prognostics.signals")

SIGNAL_COLUMNS = ["system_id", "sensor_id", "time", "value"]
TTF_COLUMNS = ["system_id", "ttf"]


def to_long_frame(dataset: SignalDataset) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Observed readings in long form, plus the time-to-failure table of the systems that have one."""
    grid = dataset.time_grid
    rows = []
    for system in dataset.systems:
        n = system.observed_through
        for p, sensor_id in enumerate(dataset.sensor_ids):
            rows.append(
                pd.DataFrame(
                    {
                        "system_id": system.id,
                        "sensor_id": sensor_id,
                        "time": grid[:n],
                        "value": system.values[p, :n],
                    }
                )
            )
    signals = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=SIGNAL_COLUMNS)
    ttf = pd.DataFrame(
        [{"system_id": s.id, "ttf": s.ttf} for s in dataset.systems if s.ttf is not None], columns=TTF_COLUMNS
    )
    return signals[SIGNAL_COLUMNS], ttf


def from_long_frame(signals: pd.DataFrame, ttf: Optional[pd.DataFrame] = None) -> SignalDataset:
    """
    Dense dataset on the union of all sampling times. Each series is linearly interpolated inside
    its own time range and left NaN outside it.
    """
    _require_columns(signals, SIGNAL_COLUMNS)
    signals = signals.assign(system_id=signals["system_id"].astype(str), sensor_id=signals["sensor_id"].astype(str))
    for column in ("time", "value"):
        _require_numeric(signals, column)

    duplicated = signals.duplicated(subset=["system_id", "sensor_id", "time"])
    if duplicated.any():
        raise IngestionError("Duplicate reading for a system, sensor and time", line_number=_line(signals, duplicated))

    grid = np.unique(signals["time"].to_numpy(dtype=float))
    sensor_ids = list(dict.fromkeys(signals["sensor_id"]))
    failure_times = _failure_times(ttf)

    systems = []
    for system_id, readings in signals.groupby("system_id", sort=False):
        values = np.full((len(sensor_ids), grid.size), np.nan)
        for sensor_id, series in readings.groupby("sensor_id", sort=False):
            series = series.sort_values("time")
            times = series["time"].to_numpy(dtype=float)
            inside = (grid >= times[0]) & (grid <= times[-1])
            values[sensor_ids.index(sensor_id), inside] = np.interp(
                grid[inside], times, series["value"].to_numpy(dtype=float)
            )
        systems.append(SystemRecord(id=system_id, values=values, ttf=failure_times.get(system_id)))

    unknown = set(failure_times) - {s.id for s in systems}
    if unknown:
        logger.warning(f"Time-to-failure given for {len(unknown)} systems without readings")
    return SignalDataset(sensor_ids=sensor_ids, time_grid=grid, systems=systems)


def _failure_times(ttf: Optional[pd.DataFrame]) -> dict:
    if ttf is None:
        return {}
    ttf = ttf.copy()
    _require_columns(ttf, TTF_COLUMNS)
    _require_numeric(ttf, "ttf")
    nonpositive = ttf["ttf"] <= 0
    if nonpositive.any():
        raise IngestionError("Time-to-failure must be positive", line_number=_line(ttf, nonpositive))
    return dict(zip(ttf["system_id"].astype(str), ttf["ttf"].astype(float)))


def _require_columns(frame: pd.DataFrame, columns: list[str]):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise IngestionError(f"Missing columns {missing}", line_number=1)


def _require_numeric(frame: pd.DataFrame, column: str):
    numeric = pd.to_numeric(frame[column], errors="coerce")
    bad = numeric.isna() | ~np.isfinite(numeric.fillna(0.0))
    if bad.any():
        raise IngestionError(f"Column {column} holds a non-numeric or non-finite value", line_number=_line(frame, bad))
    frame[column] = numeric.astype(float)


def _line(frame: pd.DataFrame, mask: pd.Series) -> int:
    # header is line 1
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2
