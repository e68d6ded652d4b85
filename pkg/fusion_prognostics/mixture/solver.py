"""
M-step of the penalized EM.

For a fixed mode k the problem is convex in (rho_k, phi0_k, phi_k):

    minimize  -sum_i g_i ln rho + 1/2 sum_i g_i (y_i rho - phi0 - x_i' phi)^2
              + lambda pi_k (alpha |phi|_1 + (1 - alpha) sum_p sqrt(q_p) |phi_p|_2)

(rho, phi0) have a closed form for every phi, so phi is found by accelerated proximal gradient on
the profiled objective, whose gradient is X_c' W X_c phi - rho(phi) X_c' W y_c. The weighted design
W^(1/2) X_c is kept instead of its Gram matrix, the step size comes from the largest eigenvalue of
that Gram matrix with backtracking as a guard, and the momentum restarts whenever the objective
would grow, so the returned phi is never worse than the start.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from fusion_prognostics.exceptions import NumericalError
from fusion_prognostics.mixture.likelihood import design, penalized_q
from fusion_prognostics.mixture.model import MixtureParams, PenaltyConfig, Responsibilities

logger = logging.getLogger("fusion_prognostics.mixture")

RHO_BOUNDS = (1e-8, 1e8)
EMPTY_MODE_FRACTION = 1e-6
LINE_SEARCH_STEPS = 21
# below this many features the Gram matrix is formed and decomposed directly
DENSE_CURVATURE_FEATURES = 200
BACKTRACKING_STEPS = 60


@dataclass(frozen=True)
class ModeUpdate:
    rho: float
    phi0: float
    phi: np.ndarray
    iterations: int = 0
    # mode carried too little responsibility and kept its previous parameters
    flagged: bool = False
    # lambda above the KKT threshold, every group is zero
    null_model: bool = False


@dataclass(frozen=True)
class _WeightedMoments:
    gamma_sum: float
    y_mean: float
    x_mean: np.ndarray
    syy_centered: float
    # X_c' W y_c
    cross: np.ndarray
    # W^(1/2) X_c, the Gram matrix being root' root
    root: np.ndarray

    def gram_times(self, v: np.ndarray) -> np.ndarray:
        return self.root.T @ (self.root @ v)

    def profile(self, phi: np.ndarray) -> tuple[float, float]:
        """Mode objective minimized over (rho, phi0) at fixed phi, and the minimizing rho."""
        rho = _rho_given_phi(self, phi)
        fitted = self.root @ phi
        value = -self.gamma_sum * np.log(rho) + 0.5 * (
            rho**2 * self.syy_centered - 2 * rho * float(self.cross @ phi) + float(fitted @ fitted)
        )
        return float(value), rho


def sgl_prox(v: np.ndarray, t_l1: float, t_group: float) -> np.ndarray:
    """Proximal map of t_l1 |u|_1 + t_group |u|_2: soft thresholding followed by group shrinkage."""
    if t_l1 < 0 or t_group < 0:
        raise ValueError("Proximal thresholds must be nonnegative")
    u = np.sign(v) * np.maximum(np.abs(v) - t_l1, 0.0)
    norm = np.linalg.norm(u)
    if norm <= t_group:
        return np.zeros_like(u)
    return u * (1 - t_group / norm)


def update_rho(gamma_k: np.ndarray, y: np.ndarray, a: np.ndarray) -> float:
    """Positive root of the rho stationarity equation for fixed linear predictor a_i = phi0 + x_i' phi."""
    gamma_k = np.asarray(gamma_k, dtype=float)
    y = np.asarray(y, dtype=float)
    return _positive_root(float(gamma_k.sum()), float(np.sum(gamma_k * y**2)), float(np.sum(gamma_k * y * a)))


def lambda_max(
    gamma_k: np.ndarray,
    pi_k: float,
    x,
    y: np.ndarray,
    penalty: PenaltyConfig,
    group_offsets: Sequence[tuple[int, int]],
) -> float:
    """Smallest lambda at which phi_k = 0 satisfies the optimality conditions of the mode problem."""
    moments = _moments(np.asarray(gamma_k, dtype=float), design(x), np.asarray(y, dtype=float))
    if pi_k <= 0:
        return float("inf")
    return _lambda_max(moments, pi_k, penalty.alpha, group_offsets)


def m_step_mode(
    gamma_k: np.ndarray,
    pi_k: float,
    x,
    y: np.ndarray,
    penalty: PenaltyConfig,
    group_offsets: Sequence[tuple[int, int]],
    start: Optional[tuple[float, float, np.ndarray]] = None,
    inner_max_iterations: int = 1000,
    inner_tolerance: float = 1e-8,
) -> ModeUpdate:
    """
    Solves the penalized problem of one mode from `start`, the previous (rho, phi0, phi). The inner
    loop stops once an accepted step lowers the objective by at most `inner_tolerance` relative.
    """
    gamma_k = np.asarray(gamma_k, dtype=float)
    x = design(x)
    y = np.asarray(y, dtype=float)
    d = x.shape[1]
    rho, phi0, phi = start if start is not None else (1.0, 0.0, np.zeros(d))
    phi = np.array(phi, dtype=float)

    if gamma_k.sum() < EMPTY_MODE_FRACTION * y.size:
        return ModeUpdate(rho=float(rho), phi0=float(phi0), phi=phi, flagged=True)
    if not np.sum(gamma_k * y**2) > 0:
        raise NumericalError("Degenerate responses: the weighted sum of squared responses is zero")

    moments = _moments(gamma_k, x, y)
    if penalty.lambda_ > 0 and penalty.lambda_ >= _lambda_max(moments, pi_k, penalty.alpha, group_offsets):
        rho = _clamp(np.sqrt(moments.gamma_sum / moments.syy_centered) if moments.syy_centered > 0 else np.inf)
        return ModeUpdate(rho=rho, phi0=rho * moments.y_mean, phi=np.zeros(d), null_model=True)

    curvature = _curvature(moments.root)
    flat = curvature <= 1e-14 * max(1.0, float(np.sum(moments.root**2)))
    iterations = 0
    if flat:
        phi = np.zeros(d) if penalty.lambda_ > 0 else phi
    else:
        phi, iterations = _accelerated_descent(
            moments, phi, penalty, pi_k, group_offsets, curvature, inner_max_iterations, inner_tolerance
        )

    rho = _rho_given_phi(moments, phi)
    phi0 = rho * moments.y_mean - float(moments.x_mean @ phi)
    return ModeUpdate(rho=rho, phi0=phi0, phi=phi, iterations=iterations)


def pi_step(
    params: MixtureParams, gamma, x, y: np.ndarray, penalty: PenaltyConfig
) -> tuple[np.ndarray, float]:
    """
    Moves pi toward the column means of gamma with the largest step u in {1, 1/2, ..., 2^-20} that
    does not increase the penalized expected complete-data objective. Returns the new pi and u,
    or the unchanged pi and 0 when every step increases it.
    """
    gamma_matrix = gamma.gamma if isinstance(gamma, Responsibilities) else np.asarray(gamma, dtype=float)
    target = gamma_matrix.mean(axis=0)
    target = target / target.sum()
    current = penalized_q(params, gamma_matrix, x, y, penalty)

    for u in 0.5 ** np.arange(LINE_SEARCH_STEPS):
        candidate = params.pi + u * (target - params.pi)
        candidate = np.maximum(candidate, 0.0)
        candidate = candidate / candidate.sum()
        value = penalized_q(params.with_pi(candidate), gamma_matrix, x, y, penalty)
        if value <= current + 1e-12 * max(1.0, abs(current)):
            return candidate, float(u)
    logger.debug("pi line search rejected every step")
    return params.pi, 0.0


def _moments(gamma_k: np.ndarray, x: np.ndarray, y: np.ndarray) -> _WeightedMoments:
    gamma_sum = float(gamma_k.sum())
    y_mean = float(gamma_k @ y / gamma_sum)
    x_mean = gamma_k @ x / gamma_sum
    yc = y - y_mean
    scale = np.sqrt(gamma_k)
    root = (x - x_mean) * scale[:, None]
    return _WeightedMoments(
        gamma_sum=gamma_sum,
        y_mean=y_mean,
        x_mean=x_mean,
        syy_centered=float(gamma_k @ yc**2),
        cross=root.T @ (scale * yc),
        root=root,
    )


def _curvature(root: np.ndarray) -> float:
    """Largest eigenvalue of root' root, the Lipschitz constant of the profiled gradient."""
    n, d = root.shape
    if d == 0 or n == 0:
        return 0.0
    if d <= DENSE_CURVATURE_FEATURES:
        return float(np.linalg.eigvalsh(root.T @ root)[-1])

    operator = LinearOperator((d, d), matvec=lambda v: root.T @ (root @ v), dtype=float)
    try:
        values = eigsh(operator, k=1, which="LA", v0=np.ones(d), tol=1e-6, return_eigenvectors=False)
    except ArpackNoConvergence as error:
        if error.eigenvalues.size == 0:
            return float(np.sum(root**2))
        values = error.eigenvalues
    return float(max(values[0], 0.0))


def _accelerated_descent(
    moments: _WeightedMoments,
    phi: np.ndarray,
    penalty: PenaltyConfig,
    pi_k: float,
    group_offsets: Sequence[tuple[int, int]],
    curvature: float,
    max_iterations: int,
    tolerance: float,
) -> tuple[np.ndarray, int]:
    weights = np.sqrt(np.array([stop - start for start, stop in group_offsets], dtype=float))
    l1 = penalty.lambda_ * pi_k * penalty.alpha
    group = penalty.lambda_ * pi_k * (1 - penalty.alpha)

    def prox(v: np.ndarray, step: float) -> np.ndarray:
        shrunk = np.empty_like(v)
        for (start, stop), weight in zip(group_offsets, weights):
            shrunk[start:stop] = sgl_prox(v[start:stop], step * l1, step * group * weight)
        return shrunk

    def penalty_of(u: np.ndarray) -> float:
        norms = np.array([np.linalg.norm(u[start:stop]) for start, stop in group_offsets])
        return float(l1 * np.abs(u).sum() + group * weights @ norms)

    lipschitz = curvature
    best = phi
    best_value = moments.profile(best)[0] + penalty_of(best)
    previous = best
    point = best
    momentum = 1.0
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        smooth, rho = moments.profile(point)
        gradient = moments.gram_times(point) - rho * moments.cross
        for _ in range(BACKTRACKING_STEPS):
            candidate = prox(point - gradient / lipschitz, 1.0 / lipschitz)
            step = candidate - point
            candidate_smooth = moments.profile(candidate)[0]
            bound = smooth + float(gradient @ step) + 0.5 * lipschitz * float(step @ step)
            if candidate_smooth <= bound + 1e-12 * max(1.0, abs(smooth)):
                break
            lipschitz *= 2.0
        else:
            raise NumericalError("Step size search of the mode solver failed", curvature=curvature)

        value = candidate_smooth + penalty_of(candidate)
        if value <= best_value:
            decrease = best_value - value
            previous, best, best_value = best, candidate, value
            if decrease <= tolerance * max(1.0, abs(best_value)):
                break
            next_momentum = (1 + np.sqrt(1 + 4 * momentum**2)) / 2
            point = best + ((momentum - 1) / next_momentum) * (best - previous)
            momentum = next_momentum
        elif point is best:
            # a plain step from the best point no longer lowers the objective
            break
        else:
            momentum = 1.0
            point = best
    return best, iterations


def _rho_given_phi(moments: _WeightedMoments, phi: np.ndarray) -> float:
    """Joint minimizer over (rho, phi0) for fixed phi, phi0 being eliminated by centering."""
    if not moments.syy_centered > 0:
        return RHO_BOUNDS[1]
    return _positive_root(moments.gamma_sum, moments.syy_centered, float(moments.cross @ phi))


def _positive_root(gamma_sum: float, syy: float, sya: float) -> float:
    if not syy > 0:
        raise NumericalError("Degenerate responses: the weighted sum of squared responses is zero")
    return _clamp((sya + np.sqrt(sya**2 + 4 * gamma_sum * syy)) / (2 * syy))


def _clamp(rho: float) -> float:
    return float(np.clip(rho, *RHO_BOUNDS))


def _lambda_max(
    moments: _WeightedMoments, pi_k: float, alpha: float, group_offsets: Sequence[tuple[int, int]]
) -> float:
    if pi_k <= 0:
        return float("inf")
    rho = _clamp(np.sqrt(moments.gamma_sum / moments.syy_centered)) if moments.syy_centered > 0 else RHO_BOUNDS[1]
    gradient = -rho * moments.cross

    thresholds = [0.0]
    for start, stop in group_offsets:
        g = gradient[start:stop]
        if not np.any(g):
            continue
        root_q = np.sqrt(stop - start)
        if alpha >= 1:
            thresholds.append(float(np.max(np.abs(g)) / pi_k))
        elif alpha <= 0:
            thresholds.append(float(np.linalg.norm(g) / (pi_k * root_q)))
        else:
            def excess(lam, g=g, root_q=root_q):
                soft = np.maximum(np.abs(g) - lam * pi_k * alpha, 0.0)
                return np.linalg.norm(soft) - lam * pi_k * (1 - alpha) * root_q

            upper = float(np.max(np.abs(g)) / (pi_k * alpha))
            thresholds.append(float(brentq(excess, 0.0, upper, xtol=1e-14, rtol=1e-14)))
    return max(thresholds)
