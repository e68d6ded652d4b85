"""
CSV bundles of datasets, offline fits and predictions. Tables are long-form so every emitted file
can be read back by the same functions.
"""
import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from fusion_prognostics.exceptions import DataError, IngestionError
from fusion_prognostics.mixture.model import FitResult, MixtureParams, Responsibilities, SensorSelectionReport
from fusion_prognostics.signals.frames import from_long_frame, to_long_frame
from fusion_prognostics.signals.model import SignalDataset
from fusion_prognostics.signals.operations import restrict
from fusion_prognostics.storage.repository import RunRepositoryInterface

logger = logging.getLogger("fusion_prognostics.storage")

SIGNALS_FILE = "signals.csv"
TTF_FILE = "ttf.csv"
TRUTH_FILE = "truth.csv"

PARAMS_FILE = "params.csv"
GROUPS_FILE = "groups.csv"
GAMMA_FILE = "gamma.csv"
TRACE_FILE = "trace.csv"
SELECTION_FILE = "selection.csv"
FIT_FILE = "fit.json"

PREDICTIONS_FILE = "predictions.csv"


@dataclass(frozen=True)
class DatasetBundle:
    dataset: SignalDataset
    # one row per system: system_id, split and whatever truth is known (mode, ttf, true_rul, ...)
    truth: pd.DataFrame

    def part(self, split: str) -> SignalDataset:
        return restrict(self.dataset, systems=self._index(split))

    @property
    def train(self) -> SignalDataset:
        return self.part("train")

    @property
    def test(self) -> SignalDataset:
        return self.part("test")

    def truth_of(self, split: str) -> pd.DataFrame:
        return self.truth.iloc[self._index(split)].reset_index(drop=True)

    def modes(self, split: str) -> Optional[np.ndarray]:
        if "mode" not in self.truth.columns:
            return None
        return self.truth_of(split)["mode"].to_numpy(dtype=int)

    def _index(self, split: str) -> np.ndarray:
        index = np.flatnonzero(self.truth["split"].to_numpy() == split)
        if index.size == 0:
            raise DataError(f"Dataset has no {split} systems")
        return index


def write_dataset(repository: RunRepositoryInterface, dataset: SignalDataset, truth: pd.DataFrame):
    signals, ttf = to_long_frame(dataset)
    repository.write_table(SIGNALS_FILE, signals)
    repository.write_table(TTF_FILE, ttf)
    repository.write_table(TRUTH_FILE, truth)


def read_dataset(repository: RunRepositoryInterface) -> DatasetBundle:
    ttf = repository.read_table(TTF_FILE) if repository.does_exist(TTF_FILE) else None
    dataset = from_long_frame(repository.read_table(SIGNALS_FILE), ttf)

    truth = repository.read_table(TRUTH_FILE)
    if not {"system_id", "split"} <= set(truth.columns):
        raise IngestionError(f"{TRUTH_FILE} needs the columns system_id and split", line_number=1)
    truth = truth.assign(system_id=truth["system_id"].astype(str)).set_index("system_id", drop=False)
    missing = [i for i in dataset.system_ids if i not in truth.index]
    if missing:
        raise IngestionError(f"{TRUTH_FILE} lacks {len(missing)} systems, first {missing[0]}")
    truth = truth.loc[dataset.system_ids].reset_index(drop=True)
    return DatasetBundle(dataset=dataset, truth=truth)


def write_fit(repository: RunRepositoryInterface, fit: FitResult, system_ids: list[str]):
    params = fit.params
    rows = []
    for k in range(params.K):
        rows.append({"mode": k, "name": "pi", "column": -1, "value": params.pi[k]})
        rows.append({"mode": k, "name": "rho", "column": -1, "value": params.rho[k]})
        rows.append({"mode": k, "name": "phi0", "column": -1, "value": params.phi0[k]})
        rows.extend({"mode": k, "name": "phi", "column": j, "value": v} for j, v in enumerate(params.phi[k]))
    repository.write_table(PARAMS_FILE, pd.DataFrame(rows))

    groups = pd.DataFrame(
        {
            "sensor_id": list(fit.selection.sensor_ids),
            "start": [start for start, _ in params.group_offsets],
            "stop": [stop for _, stop in params.group_offsets],
        }
    )
    repository.write_table(GROUPS_FILE, groups)

    gamma = pd.DataFrame(fit.gamma.gamma, columns=[f"gamma_{k}" for k in range(params.K)])
    gamma.insert(0, "system_id", list(system_ids))
    gamma["label"] = fit.hard_labels
    repository.write_table(GAMMA_FILE, gamma)

    trace = pd.DataFrame({"iteration": np.arange(fit.objective_trace.size), "objective": fit.objective_trace})
    repository.write_table(TRACE_FILE, trace)
    repository.write_table(SELECTION_FILE, selection_table(fit.selection))

    summary = {
        "K": params.K,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "flagged_modes": list(fit.flagged_modes),
        "start": fit.start,
        "collapsed": fit.collapsed,
    }
    repository.write_text(FIT_FILE, json.dumps(summary, indent=2, sort_keys=True) + "\n")


def read_fit(repository: RunRepositoryInterface) -> tuple[FitResult, list[str]]:
    """The stored fit and the ids of the systems it was fitted on."""
    try:
        summary = json.loads(repository.read_text(FIT_FILE))
        K = int(summary["K"])
        converged = bool(summary["converged"])
        iterations = int(summary["iterations"])
        flagged_modes = tuple(int(k) for k in summary["flagged_modes"])
        start = int(summary.get("start", 0))
        collapsed = bool(summary.get("collapsed", False))
    except (json.JSONDecodeError, AttributeError, KeyError, TypeError, ValueError) as error:
        raise IngestionError(f"Invalid {FIT_FILE}: {error}", path=FIT_FILE)

    groups = repository.read_table(GROUPS_FILE)
    params_table = repository.read_table(PARAMS_FILE)
    gamma_table = repository.read_table(GAMMA_FILE)
    trace_table = repository.read_table(TRACE_FILE)
    try:
        offsets = list(zip(groups["start"].astype(int), groups["stop"].astype(int)))
        params = _params_from_table(params_table, K, offsets)
        gamma = gamma_table[[f"gamma_{k}" for k in range(K)]].to_numpy(dtype=float)
        system_ids = gamma_table["system_id"].astype(str).tolist()
        trace = trace_table["objective"].to_numpy(dtype=float)
        sensor_ids = groups["sensor_id"].astype(str).tolist()
    except (AttributeError, IndexError, KeyError, TypeError, ValueError) as error:
        raise IngestionError(f"Stored fit tables are incomplete or malformed: {error!r}")

    fit = FitResult(
        params=params,
        gamma=Responsibilities(gamma),
        objective_trace=trace,
        selection=SensorSelectionReport(sensor_ids=tuple(sensor_ids), norms=params.group_norms()),
        converged=converged,
        iterations=iterations,
        flagged_modes=flagged_modes,
        start=start,
        collapsed=collapsed,
    )
    return fit, system_ids


def _params_from_table(table: pd.DataFrame, K: int, offsets: list[tuple[int, int]]) -> MixtureParams:
    n_features = offsets[-1][1] if offsets else 0
    scalars = {}
    phi = np.zeros((K, n_features))
    for row in table.itertuples(index=False):
        if row.name == "phi":
            phi[int(row.mode), int(row.column)] = float(row.value)
        else:
            scalars[(row.name, int(row.mode))] = float(row.value)
    missing = [(name, k) for name in ("pi", "rho", "phi0") for k in range(K) if (name, k) not in scalars]
    if missing:
        raise IngestionError(f"{PARAMS_FILE} lacks the parameter {missing[0]}")
    return MixtureParams(
        pi=[scalars[("pi", k)] for k in range(K)],
        rho=[scalars[("rho", k)] for k in range(K)],
        phi0=[scalars[("phi0", k)] for k in range(K)],
        phi=phi,
        group_offsets=offsets,
    )


def selection_table(selection: SensorSelectionReport) -> pd.DataFrame:
    rows = [
        {
            "sensor_id": sensor_id,
            "mode": k,
            "norm": float(selection.norms[p, k]),
            "selected": bool(selection.significant[p, k]),
        }
        for p, sensor_id in enumerate(selection.sensor_ids)
        for k in range(selection.norms.shape[1])
    ]
    return pd.DataFrame(rows, columns=["sensor_id", "mode", "norm", "selected"])
