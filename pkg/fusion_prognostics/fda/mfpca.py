import logging

import numpy as np

from fusion_prognostics.exceptions import DataError, InsufficientData
from fusion_prognostics.fda.fpca import fit_multivariate_basis, pace_scores, select_fve, standardize_columns
from fusion_prognostics.fda.model import EigenBasis, MfpcaScores
from fusion_prognostics.signals.model import SignalDataset

logger = logging.getLogger("fusion_prognostics.fda")


def fit_mfpca(dataset: SignalDataset, fve: float = 0.95) -> tuple[EigenBasis, MfpcaScores]:
    """
    Multivariate FPCA of the dataset's sensors concatenated over its whole grid. The returned basis
    keeps the H components selected by FVE and the scores are standardized with training constants.
    """
    if dataset.n_systems < 2:
        raise InsufficientData("MFPCA needs at least 2 systems")
    curves = dataset.values
    if not np.all(np.isfinite(curves)):
        raise DataError("MFPCA needs every system observed through the whole grid")

    basis = fit_multivariate_basis(curves, dataset.time_grid, sensor_ids=dataset.sensor_ids)
    H = select_fve(basis.eigenvalues, fve)
    basis = basis.truncated(H)

    raw = pace_scores(basis, curves.reshape(dataset.n_systems, -1))
    standardization, zeta = standardize_columns(raw)
    logger.debug(f"MFPCA on {dataset.n_systems} systems and {dataset.n_sensors} sensors retained {H} components")
    return basis, MfpcaScores(zeta=zeta, standardization=standardization)
