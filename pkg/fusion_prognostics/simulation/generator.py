"""
Seeded generator of degradation signals driven by a latent rate theta.

A system of mode k with rate theta fails when -theta / ln t first reaches the mode's threshold D_k.
Each sensor p observes sign * (-theta_ip / ln t) + noise, where theta_ip is drawn conditionally on
theta and the informative sensors of a mode get higher correlation and higher signal-to-noise.
"""
import logging
from typing import Optional

import numpy as np

from fusion_prognostics.exceptions import DataError
from fusion_prognostics.signals.model import SignalDataset, SystemRecord
from fusion_prognostics.simulation.model import SimConfig, SimulatedStudy, SimulationTruth

logger = logging.getLogger("fusion_prognostics.simulation")

# substream kinds
THETA, SENSOR_RHO, SENSOR_SNR, THETA_SENSOR, SIGN, NOISE = range(6)

REDRAW_WARNING_RATE = 0.01
MAX_REDRAWS = 1000


def ttf_of(theta: float, D: float) -> float:
    if not (theta > 0 and D > 0):
        raise DataError(f"theta and D must be positive, got theta={theta}, D={D}")
    return float(np.exp(-theta / D))


def latent_path(theta: float, grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if np.any((grid <= 0) | (grid >= 1)):
        raise DataError("Sampling times must lie strictly inside (0, 1)")
    return -theta / np.log(grid)


def gen_sensor_path(
    theta_ip: float, sigma_kp: float, sign: int, grid: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    path = latent_path(theta_ip, grid)
    noise = rng.normal(0.0, sigma_kp, size=path.size) if sigma_kp > 0 else np.zeros(path.size)
    return sign * path + noise


def substream(seed: int, kind: int, *index: int) -> np.random.Generator:
    return np.random.default_rng([seed, kind, *index])


def gen_dataset(cfg: Optional[SimConfig] = None) -> SimulatedStudy:
    cfg = cfg or SimConfig()
    grid = cfg.grid
    K, P, n = cfg.K, cfg.n_sensors, cfg.n_per_mode

    sensor_rho = np.empty((K, P))
    sensor_snr = np.empty((K, P))
    for k in range(K):
        for p in range(P):
            informative = cfg.is_informative(k, p)
            rho_interval = cfg.rho_informative if informative else cfg.rho_noninformative
            snr_interval = cfg.snr_informative if informative else cfg.snr_noninformative
            sensor_rho[k, p] = substream(cfg.seed, SENSOR_RHO, k, p).uniform(*rho_interval)
            sensor_snr[k, p] = substream(cfg.seed, SENSOR_SNR, k, p).uniform(*snr_interval)

    systems, ids, modes, thetas, ttfs, train = [], [], [], [], [], []
    redraws = 0
    for k in range(K):
        mu, D = cfg.mu[k], cfg.threshold[k]
        for i in range(n):
            theta, extra = _positive_theta(substream(cfg.seed, THETA, k, i), mu, cfg.theta_sd)
            redraws += extra
            ttf = ttf_of(theta, D)

            values = np.empty((P, grid.size))
            for p in range(P):
                theta_ip = _sensor_theta(
                    substream(cfg.seed, THETA_SENSOR, k, i, p), cfg, mu, theta, sensor_rho[k, p]
                )
                sign = 1 if substream(cfg.seed, SIGN, k, i, p).random() < 0.5 else -1
                sigma = mu / sensor_snr[k, p]
                values[p] = gen_sensor_path(theta_ip, sigma, sign, grid, substream(cfg.seed, NOISE, k, i, p))
            values[:, grid > ttf] = np.nan

            system_id = str(k * n + i + 1)
            systems.append(SystemRecord(id=system_id, values=values, ttf=ttf))
            ids.append(system_id)
            modes.append(k)
            thetas.append(theta)
            ttfs.append(ttf)
            train.append(i < cfg.train_per_mode)

    rate = redraws / (K * n)
    if rate > REDRAW_WARNING_RATE:
        logger.warning(f"Re-drew {redraws} nonpositive theta values ({rate:.1%} of the systems)")

    dataset = SignalDataset(sensor_ids=[str(p + 1) for p in range(P)], time_grid=grid, systems=systems)
    truth = SimulationTruth(
        system_ids=np.array(ids),
        modes=np.array(modes, dtype=int),
        theta=np.array(thetas),
        ttf=np.array(ttfs),
        train=np.array(train, dtype=bool),
        sensor_rho=sensor_rho,
        sensor_snr=sensor_snr,
        redraws=redraws,
    )
    logger.info(f"Generated {K * n} systems with {P} sensors on {grid.size} grid points, seed {cfg.seed}")
    return SimulatedStudy(config=cfg, dataset=dataset, truth=truth)


def _positive_theta(rng: np.random.Generator, mu: float, sd: float) -> tuple[float, int]:
    for redraws in range(MAX_REDRAWS):
        theta = rng.normal(mu, sd)
        if theta > 0:
            return float(theta), redraws
    raise DataError(f"Could not draw a positive theta from N({mu}, {sd}^2)")


def _sensor_theta(rng: np.random.Generator, cfg: SimConfig, mu: float, theta: float, rho: float) -> float:
    if cfg.theta_coupling == "gaussian":
        return float(rng.normal(mu + rho * (theta - mu), cfg.theta_sd * np.sqrt(1 - rho**2)))
    return float(rng.normal(mu * (1 - np.sqrt(1 - rho)), cfg.theta_sd))
