import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from fusion_prognostics.clustering.model import KmeansConfig
from fusion_prognostics.exceptions import UsageError
from fusion_prognostics.mixture.model import EmConfig, PenaltyConfig
from fusion_prognostics.pipeline.evaluation import LIFE_PERCENTILES
from fusion_prognostics.pipeline.model import CvConfig, OnlineConfig
from fusion_prognostics.signals.smoothing import DEFAULT_BANDWIDTH_CANDIDATES
from fusion_prognostics.simulation.model import REGIMES, SimConfig
from fusion_prognostics.storage.cmapss import DEFAULT_EXCLUDED


@dataclass
class StorageConfiguration:
    # Default root for command outputs when --out is not given
    path: str = "./runs"
    lock_name: str = ".lock"

    @property
    def root(self) -> Path:
        return Path(self.path)


@dataclass
class LoggingConfiguration:
    # Logging levels: CRITICAL, FATAL, ERROR, WARNING, WARN, INFO, DEBUG, NOTSET
    level: str = "info"
    format: str = "%(asctime)s \t %(name)s \t %(levelname)s \t %(message)s"
    path: Union[str, None] = None


class ApplicationConfiguration:
    debug: bool
    storage: StorageConfiguration
    logging: LoggingConfiguration
    default_configuration_path: str = (Path(__file__).parent / "assets/default_configuration.yaml").resolve().__str__()

    def __init__(self, dotenv_path: Union[str, Path] = ".env"):
        load_dotenv(dotenv_path=dotenv_path)

        self.debug = os.environ.get("FUSION_DEBUG", "false").lower() == "true"

        self.storage = StorageConfiguration(
            path=os.environ.get("FUSION_STORAGE_PATH", "./runs"),
            lock_name=os.environ.get("FUSION_STORAGE_LOCK_NAME", ".lock"),
        )

        self.logging = LoggingConfiguration(
            level=os.environ.get("FUSION_LOGGING_LEVEL", "info"),
            format=os.environ.get("FUSION_LOGGING_FORMAT", "%(asctime)s \t %(name)s \t %(levelname)s \t %(message)s"),
            path=os.environ.get("FUSION_LOGGING_PATH", None),
        )

    def __repr__(self) -> str:
        return f"ApplicationConfiguration(debug={self.debug}, storage={self.storage}, logging={self.logging})"


class CmapssConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # 1-based sensor numbers dropped at ingestion
    excluded_sensors: tuple[int, ...] = DEFAULT_EXCLUDED
    zscore: bool = True
    folds: int = Field(default=3, ge=2)
    # cross-validated choice of the online smoothing bandwidth
    select_bandwidth: bool = True
    bandwidth_candidates: tuple[float, ...] = DEFAULT_BANDWIDTH_CANDIDATES
    bandwidth_folds: int = Field(default=5, ge=2)

    @field_validator("excluded_sensors")
    @classmethod
    def _sensor_numbers(cls, sensors):
        if any(not 1 <= p <= 21 for p in sensors):
            raise ValueError("excluded sensors must be numbered 1 to 21")
        return sensors

    @field_validator("bandwidth_candidates")
    @classmethod
    def _bandwidths(cls, candidates):
        if not candidates or any(not 0 < b <= 1 for b in candidates):
            raise ValueError("bandwidth candidates must be a nonempty list of values in (0, 1]")
        return candidates


def _default_regime_penalties() -> dict[str, PenaltyConfig]:
    return {
        "snr_2_5": PenaltyConfig(lambda_=0.0466, alpha=1.0),
        "snr_5_8": PenaltyConfig(lambda_=0.0258, alpha=0.0),
        "snr_8_11": PenaltyConfig(lambda_=0.0258, alpha=0.25),
    }


class RunConfig(BaseModel):
    """Everything a command needs besides its paths. Unknown keys are rejected at every level."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    version: int = 1
    K: int = Field(default=2, ge=1)
    # seeds every stochastic step that does not set its own
    seed: int = 0
    fve: float = Field(default=0.95, gt=0.0, le=1.0)
    penalty: PenaltyConfig = PenaltyConfig(lambda_=0.0466, alpha=1.0)
    em: EmConfig = EmConfig()
    kmeans: KmeansConfig = KmeansConfig()
    cv: CvConfig = CvConfig()
    online: OnlineConfig = OnlineConfig()
    simulation: SimConfig = SimConfig()
    regimes: tuple[str, ...] = tuple(REGIMES)
    # used by the study when tune is false
    regime_penalties: dict[str, PenaltyConfig] = Field(default_factory=_default_regime_penalties)
    tune: bool = True
    percentiles: tuple[int, ...] = LIFE_PERCENTILES
    cmapss: CmapssConfig = CmapssConfig()

    @model_validator(mode="before")
    @classmethod
    def _propagate_seed(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "seed" not in data:
            return data
        data = dict(data)
        for section in ("em", "cv", "simulation"):
            value = data.get(section)
            if value is None:
                data[section] = {"seed": data["seed"]}
            elif isinstance(value, dict):
                data[section] = {"seed": data["seed"]} | value
        return data

    @field_validator("regimes")
    @classmethod
    def _known_regimes(cls, regimes):
        unknown = [r for r in regimes if r not in REGIMES]
        if unknown:
            raise ValueError(f"unknown regimes {unknown}, expected names from {sorted(REGIMES)}")
        return regimes

    @field_validator("percentiles")
    @classmethod
    def _percentiles(cls, percentiles):
        if not percentiles or any(not 0 < p < 100 for p in percentiles):
            raise ValueError("percentiles must lie strictly between 0 and 100")
        return percentiles

    @model_validator(mode="after")
    def _consistent(self):
        if self.simulation.K != self.K:
            raise ValueError(f"simulation describes {self.simulation.K} failure modes, K is {self.K}")
        return self

    @staticmethod
    def from_yaml(path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"Configuration file not found: {path}", path=str(path))
        except yaml.YAMLError as error:
            raise UsageError(f"Configuration file {path} is not valid YAML: {error}", path=str(path))
        return RunConfig.from_dict(data or {})

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        try:
            return RunConfig.model_validate(data)
        except ValidationError as error:
            problems = "; ".join(f"{'.'.join(str(v) for v in e['loc'])}: {e['msg']}" for e in error.errors())
            raise UsageError(f"Invalid configuration: {problems}")

    def with_overrides(self, **values: Optional[Any]) -> "RunConfig":
        """Re-validated copy with the given top-level values, None values ignored."""
        data = self.model_dump(mode="json", by_alias=True)
        values = {key: value for key, value in values.items() if value is not None}
        if "seed" in values:
            for section in ("em", "cv", "simulation"):
                data[section].pop("seed", None)
        data |= values
        return RunConfig.from_dict(data)

    def penalty_for(self, regime: str) -> PenaltyConfig:
        return self.regime_penalties.get(regime, self.penalty)

    def digest(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
