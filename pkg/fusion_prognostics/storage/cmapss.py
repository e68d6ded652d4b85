"""
C-MAPSS turbofan files: whitespace-separated text, one line per engine cycle with the unit number,
the cycle, 3 operational settings and 21 sensor readings. The RUL file lists the true remaining
life of each test unit, in unit order.
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd

from fusion_prognostics.exceptions import IngestionError
from fusion_prognostics.signals.model import SignalDataset, SystemRecord
from fusion_prognostics.signals.operations import zscore_sensors

logger = logging.getLogger("fusion_prognostics.storage")

N_SETTINGS = 3
N_SENSORS = 21
CMAPSS_COLUMNS = (
    ["unit", "cycle"]
    + [f"setting_{j}" for j in range(1, N_SETTINGS + 1)]
    + [f"sensor_{p}" for p in range(1, N_SENSORS + 1)]
)
# flat or nearly flat over the whole fleet
DEFAULT_EXCLUDED = (1, 5, 6, 10, 16, 18, 19)


@dataclass(frozen=True)
class CmapssData:
    # training units over their whole lives, ttf = last cycle
    train: SignalDataset
    # test units observed through their last provided cycle, ttf unknown
    test: SignalDataset
    # one row per test unit: system_id, observed_cycles, true_rul, actual_life
    test_truth: pd.DataFrame
    excluded: tuple[int, ...]

    def truth_frame(self) -> pd.DataFrame:
        """Truth table of both splits in the dataset bundle layout."""
        train = pd.DataFrame(
            {
                "system_id": self.train.system_ids,
                "split": "train",
                "observed_cycles": [s.observed_through for s in self.train.systems],
                "ttf": self.train.ttf,
            }
        )
        test = self.test_truth.assign(split="test").rename(columns={"actual_life": "ttf"})
        return pd.concat([train, test[["system_id", "split", "observed_cycles", "ttf", "true_rul"]]], ignore_index=True)

    def combined(self) -> SignalDataset:
        return SignalDataset(
            sensor_ids=self.train.sensor_ids,
            time_grid=self.train.time_grid,
            systems=list(self.train.systems) + list(self.test.systems),
        )


def read_cmapss(path: Union[str, Path]) -> pd.DataFrame:
    """
    Records of one C-MAPSS file, checked for the column count and contiguous cycles per unit.
    Line numbers in errors count the non-blank lines of the file.
    """
    raw = _read_whitespace_table(path)
    if raw.shape[1] != len(CMAPSS_COLUMNS):
        raise IngestionError(
            f"Expected {len(CMAPSS_COLUMNS)} columns, found {raw.shape[1]}", line_number=1, path=str(path)
        )
    short = raw.isna().any(axis=1).to_numpy()
    if short.any():
        raise IngestionError(
            f"Expected {len(CMAPSS_COLUMNS)} columns, found fewer",
            line_number=int(np.argmax(short)) + 1,
            path=str(path),
        )
    records = raw.apply(pd.to_numeric, errors="coerce")
    invalid = records.isna().any(axis=1).to_numpy()
    if invalid.any():
        raise IngestionError("Non-numeric value", line_number=int(np.argmax(invalid)) + 1, path=str(path))

    records.columns = CMAPSS_COLUMNS
    records = records.astype({"unit": int, "cycle": int})
    records["line_number"] = np.arange(1, len(records) + 1)

    for unit, cycles in records.groupby("unit", sort=False):
        expected = np.arange(1, len(cycles) + 1)
        gaps = cycles["cycle"].to_numpy() != expected
        if gaps.any():
            line_number = int(cycles["line_number"].to_numpy()[np.argmax(gaps)])
            raise IngestionError(
                f"Unit {unit}: cycles are not contiguous from 1",
                line_number=line_number,
                path=str(path),
                unit=int(unit),
            )
    return records.drop(columns="line_number")


def read_rul(path: Union[str, Path]) -> np.ndarray:
    raw = _read_whitespace_table(path)
    if raw.shape[1] != 1:
        raise IngestionError("Expected one remaining life per line", line_number=1, path=str(path))
    values = pd.to_numeric(raw[0], errors="coerce").to_numpy(dtype=float)
    invalid = np.isnan(values)
    if invalid.any():
        raise IngestionError("Non-numeric remaining life", line_number=int(np.argmax(invalid)) + 1, path=str(path))
    return values


def _read_whitespace_table(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"File not found: {path}", path=str(path))
    try:
        return pd.read_csv(path, sep=r"\s+", header=None, dtype=str)
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path} holds no records", path=str(path))
    except pd.errors.ParserError as error:
        found = re.search(r"line (\d+)", str(error))
        line_number = int(found.group(1)) if found else None
        raise IngestionError(f"Cannot parse {path}: {error}", line_number=line_number, path=str(path))
    except UnicodeDecodeError as error:
        raise IngestionError(f"{path} is not UTF-8 text: {error}", path=str(path))


def write_cmapss(records: pd.DataFrame, path: Union[str, Path]):
    lines = [
        " ".join([str(int(row[0])), str(int(row[1]))] + [f"{v:.17g}" for v in row[2:]])
        for row in records[CMAPSS_COLUMNS].itertuples(index=False)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def ingest_cmapss(
    train_path: Union[str, Path],
    test_path: Union[str, Path],
    rul_path: Union[str, Path],
    excluded: Sequence[int] = DEFAULT_EXCLUDED,
    zscore: bool = True,
) -> CmapssData:
    """
    Train and test units on one cycle grid 1..longest unit, cycles as time. Excluded sensors are
    dropped, and with `zscore` every kept sensor is normalized with its training mean and sd.
    """
    train_records = read_cmapss(train_path)
    test_records = read_cmapss(test_path)
    rul = read_rul(rul_path)

    test_units = list(dict.fromkeys(test_records["unit"]))
    if len(test_units) != rul.size:
        raise IngestionError(
            f"{len(test_units)} test units but {rul.size} remaining lives", path=str(rul_path)
        )

    excluded = tuple(sorted(set(int(p) for p in excluded)))
    kept = [p for p in range(1, N_SENSORS + 1) if p not in excluded]
    if not kept:
        raise IngestionError("Every sensor is excluded")
    columns = [f"sensor_{p}" for p in kept]
    sensor_ids = [str(p) for p in kept]

    n_cycles = int(max(train_records["cycle"].max(), test_records["cycle"].max()))
    grid = np.arange(1, n_cycles + 1, dtype=float)

    train_systems = [
        _system(f"train_{unit}", cycles, columns, n_cycles, ttf=float(len(cycles)))
        for unit, cycles in train_records.groupby("unit", sort=False)
    ]
    test_systems = [
        _system(f"test_{unit}", cycles, columns, n_cycles) for unit, cycles in test_records.groupby("unit", sort=False)
    ]

    train = SignalDataset(sensor_ids=sensor_ids, time_grid=grid, systems=train_systems)
    test = SignalDataset(sensor_ids=sensor_ids, time_grid=grid, systems=test_systems)
    if zscore:
        (train, test), _, _ = zscore_sensors(train, test)

    observed = np.array([s.observed_through for s in test_systems])
    test_truth = pd.DataFrame(
        {
            "system_id": [s.id for s in test_systems],
            "observed_cycles": observed,
            "true_rul": rul,
            "actual_life": observed + rul,
        }
    )
    logger.info(
        f"Ingested {train.n_systems} training and {test.n_systems} test units with {len(kept)} sensors "
        f"over {n_cycles} cycles"
    )
    return CmapssData(train=train, test=test, test_truth=test_truth, excluded=excluded)


def _system(system_id: str, cycles: pd.DataFrame, columns: list[str], n_cycles: int, ttf=None) -> SystemRecord:
    values = np.full((len(columns), n_cycles), np.nan)
    values[:, : len(cycles)] = cycles[columns].to_numpy(dtype=float).T
    return SystemRecord(id=system_id, values=values, ttf=ttf, observed_through=len(cycles))
