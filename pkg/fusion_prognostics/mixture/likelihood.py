import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import entr, logsumexp

from fusion_prognostics.exceptions import DataError, NumericalError
from fusion_prognostics.fda.model import FeatureMatrix
from fusion_prognostics.mixture.model import MixtureParams, PenaltyConfig, Responsibilities

logger = logging.getLogger("fusion_prognostics.mixture")

PI_FLOOR = 1e-10
LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
BOUND_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BoundCheck:
    # E_g[log complete-data likelihood] and the log-likelihood it bounds from below
    lhs: float
    rhs: float
    holds: bool
    # ell - (E_g[ell_C] + entropy(g)); zero when g is the posterior
    identity_gap: float
    at_posterior: bool


def design(x: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    return x.x if isinstance(x, FeatureMatrix) else np.atleast_2d(np.asarray(x, dtype=float))


def log_joint(params: MixtureParams, x, y: np.ndarray) -> np.ndarray:
    """N x K values of ln pi_k + ln rho_k + ln N(y_i rho_k - phi0_k - x_i' phi_k; 0, 1)."""
    x = design(x)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.size or x.shape[1] != params.n_features:
        raise DataError(f"Design {x.shape} does not match {y.size} responses and {params.n_features} coefficients")

    residuals = y[:, None] * params.rho[None, :] - params.phi0[None, :] - x @ params.phi.T
    return (
        np.log(np.maximum(params.pi, PI_FLOOR))[None, :]
        + np.log(params.rho)[None, :]
        - LOG_SQRT_2PI
        - 0.5 * residuals**2
    )


def neg_idll(params: MixtureParams, x, y: np.ndarray) -> float:
    value = -float(logsumexp(log_joint(params, x, y), axis=1).sum())
    if not np.isfinite(value):
        raise NumericalError("Negative log-likelihood is not finite", value=str(value))
    return value


def e_step(params: MixtureParams, x, y: np.ndarray) -> Responsibilities:
    joint = log_joint(params, x, y)
    gamma = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
    gamma /= gamma.sum(axis=1, keepdims=True)
    return Responsibilities(gamma=gamma)


def q_function(params: MixtureParams, gamma: Union[Responsibilities, np.ndarray], x, y: np.ndarray) -> float:
    """Expected negative complete-data log-likelihood under the responsibilities."""
    gamma = _gamma(gamma)
    joint = log_joint(params, x, y)
    if gamma.shape != joint.shape:
        raise DataError(f"Responsibilities have shape {gamma.shape}, expected {joint.shape}")
    return -float(np.sum(gamma * joint))


def entropy(gamma: Union[Responsibilities, np.ndarray]) -> float:
    return float(entr(_gamma(gamma)).sum())


def check_cdll_bound(params: MixtureParams, g: Union[Responsibilities, np.ndarray], x, y: np.ndarray) -> BoundCheck:
    """
    Compares E_g[ell_C] with the log-likelihood ell it bounds from below. When g is the posterior,
    ell = E_g[ell_C] + entropy(g) also holds.
    """
    g = _gamma(g)
    lhs = -q_function(params, g, x, y)
    rhs = -neg_idll(params, x, y)
    posterior = e_step(params, x, y).gamma
    return BoundCheck(
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs <= rhs + BOUND_TOLERANCE),
        identity_gap=float(rhs - (lhs + entropy(g))),
        at_posterior=bool(np.allclose(g, posterior, rtol=0.0, atol=1e-12)),
    )


def penalty_value(params: MixtureParams, penalty: PenaltyConfig) -> float:
    """lambda * sum_k pi_k (alpha sum_p |phi_pk|_1 + (1 - alpha) sum_p sqrt(q_p) |phi_pk|_2)."""
    return float(penalty.lambda_ * np.dot(params.pi, mode_penalties(params, penalty)))


def mode_penalties(params: MixtureParams, penalty: PenaltyConfig) -> np.ndarray:
    """Per-mode sparse-group norm, before the lambda * pi_k factor."""
    sizes = np.sqrt(np.array(params.group_sizes, dtype=float))
    l1 = np.abs(params.phi).sum(axis=1)
    group = (params.group_norms() * sizes[:, None]).sum(axis=0) if sizes.size else np.zeros(params.K)
    return penalty.alpha * l1 + (1 - penalty.alpha) * group


def penalized_objective(params: MixtureParams, x, y: np.ndarray, penalty: PenaltyConfig) -> float:
    return neg_idll(params, x, y) + penalty_value(params, penalty)


def penalized_q(params: MixtureParams, gamma, x, y: np.ndarray, penalty: PenaltyConfig) -> float:
    return q_function(params, gamma, x, y) + penalty_value(params, penalty)


def _gamma(gamma: Union[Responsibilities, np.ndarray]) -> np.ndarray:
    return gamma.gamma if isinstance(gamma, Responsibilities) else np.asarray(gamma, dtype=float)
