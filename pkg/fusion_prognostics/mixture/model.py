from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from fusion_prognostics.exceptions import DataError

SIGNIFICANCE_THRESHOLD = 1e-8


class PenaltyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lambda_: float = Field(default=0.0, ge=0.0, alias="lambda")
    alpha: float = Field(default=1.0, ge=0.0, le=1.0)
    group_sizes: Optional[tuple[int, ...]] = None

    @model_validator(mode="after")
    def _positive_groups(self):
        if self.group_sizes is not None and any(q < 1 for q in self.group_sizes):
            raise ValueError("group sizes must be positive")
        return self


class EmConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_iterations: int = Field(default=500, ge=1)
    # relative change of the penalized negative log-likelihood
    tolerance: float = Field(default=1e-6, gt=0.0)
    inner_max_iterations: int = Field(default=1000, ge=1)
    inner_tolerance: float = Field(default=1e-8, gt=0.0)
    init_mode: Literal["random", "labels"] = "random"
    # seeded random starts; each runs start_iterations iterations and the best one is run to convergence
    n_starts: int = Field(default=5, ge=1)
    start_iterations: int = Field(default=20, ge=1)
    # a start that leaves any mode with a smaller share of the systems counts as collapsed
    minimum_mode_fraction: float = Field(default=0.05, ge=0.0, lt=1.0)
    seed: int = 0


@dataclass(frozen=True)
class MixtureParams:
    """
    Scale-invariant parameters of the mixture of Gaussian regressions. Mode k models
    y * rho_k = phi0_k + x' phi_k + N(0, 1), which is y ~ N(x' beta_k + phi0_k / rho_k, 1 / rho_k^2).
    """

    pi: np.ndarray
    rho: np.ndarray
    phi0: np.ndarray
    # K x d coefficients, sensor groups given by group_offsets
    phi: np.ndarray
    group_offsets: Sequence[tuple[int, int]]

    def __post_init__(self):
        for name in ("pi", "rho", "phi0", "phi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "group_offsets", tuple((int(a), int(b)) for a, b in self.group_offsets))

        K = self.pi.size
        if self.rho.shape != (K,) or self.phi0.shape != (K,) or self.phi.ndim != 2 or self.phi.shape[0] != K:
            raise DataError("Mixture parameters disagree on the number of modes")
        if self.group_offsets and self.group_offsets[-1][1] != self.phi.shape[1]:
            raise DataError("Group offsets do not partition the coefficient columns")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1) > 1e-12 * max(1, K):
            raise DataError("Mixing proportions must lie on the simplex")
        if np.any(~(self.rho > 0)):
            raise DataError("Precisions rho must be positive")

    @property
    def K(self) -> int:
        return int(self.pi.size)

    @property
    def n_features(self) -> int:
        return int(self.phi.shape[1])

    @property
    def group_sizes(self) -> list[int]:
        return [stop - start for start, stop in self.group_offsets]

    @property
    def beta(self) -> np.ndarray:
        return self.phi / self.rho[:, None]

    @property
    def sigma(self) -> np.ndarray:
        return 1.0 / self.rho

    def group(self, mode: int, sensor: int) -> np.ndarray:
        start, stop = self.group_offsets[sensor]
        return self.phi[mode, start:stop]

    def group_norms(self) -> np.ndarray:
        """P x K l2 norms of phi_{p,k}."""
        return np.array(
            [[np.linalg.norm(self.phi[k, start:stop]) for k in range(self.K)] for start, stop in self.group_offsets]
        ).reshape(len(self.group_offsets), self.K)

    def permuted(self, order: Sequence[int]) -> "MixtureParams":
        order = list(order)
        return MixtureParams(
            pi=self.pi[order], rho=self.rho[order], phi0=self.phi0[order], phi=self.phi[order],
            group_offsets=self.group_offsets,
        )

    def with_mode(self, mode: int, rho: float, phi0: float, phi: np.ndarray) -> "MixtureParams":
        new_rho, new_phi0, new_phi = self.rho.copy(), self.phi0.copy(), self.phi.copy()
        new_rho[mode], new_phi0[mode], new_phi[mode] = rho, phi0, phi
        return MixtureParams(pi=self.pi, rho=new_rho, phi0=new_phi0, phi=new_phi, group_offsets=self.group_offsets)

    def with_pi(self, pi: np.ndarray) -> "MixtureParams":
        return MixtureParams(pi=pi, rho=self.rho, phi0=self.phi0, phi=self.phi, group_offsets=self.group_offsets)


@dataclass(frozen=True)
class Responsibilities:
    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim != 2:
            raise DataError("Responsibilities must be an N x K matrix")
        if np.any(gamma < -1e-12) or np.any(np.abs(gamma.sum(axis=1) - 1) > 1e-10):
            raise DataError("Responsibility rows must lie on the simplex")
        object.__setattr__(self, "gamma", np.clip(gamma, 0.0, 1.0))

    @property
    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.gamma, axis=1)

    @property
    def mode_weights(self) -> np.ndarray:
        return self.gamma.sum(axis=0)


@dataclass(frozen=True)
class SensorSelectionReport:
    sensor_ids: Sequence[str]
    # P x K l2 norms of phi_{p,k}
    norms: np.ndarray

    @property
    def significant(self) -> np.ndarray:
        return self.norms > SIGNIFICANCE_THRESHOLD

    def selected(self, mode: int) -> list[int]:
        return np.flatnonzero(self.significant[:, mode]).tolist()

    def union(self) -> list[int]:
        return np.flatnonzero(self.significant.any(axis=1)).tolist()


@dataclass(frozen=True)
class FitResult:
    params: MixtureParams
    gamma: Responsibilities
    objective_trace: np.ndarray
    selection: SensorSelectionReport
    converged: bool
    iterations: int
    flagged_modes: tuple[int, ...] = field(default_factory=tuple)
    # the random start the fit came from, and whether every start left a mode below the minimum weight
    start: int = 0
    collapsed: bool = False

    @property
    def hard_labels(self) -> np.ndarray:
        return self.gamma.hard_labels

    @property
    def degenerate(self) -> bool:
        """No sensor is selected for any mode."""
        return not bool(self.selection.significant.any())

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])
