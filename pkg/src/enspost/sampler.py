"""Drawing spatial forecast realizations from fitted covariance models.

Sampling works in the reduced-rank factorization: a draw needs only a
d-dimensional standard normal vector (plus an S-dimensional one for the
additive nugget), never the dense S x S covariance. Draws are clamped at the
physical temperature floor after generation; the underlying law stays
normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import normal_matrix
from .constants import PHYSICAL_FLOOR_C
from .covmodel import ADDITIVE, MULTIPLICATIVE, TaperedPcaModel
from .errors import DataError


@dataclass
class ForecastSample:
    """M draws of the spatial predictive distribution for one (year, month)."""

    year: int
    month: int
    draws: np.ndarray  # (M, S)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2:
            raise DataError("draws must be an M x S matrix")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_cells(self) -> int:
        return self.draws.shape[1]


def _check_mu(model, mu):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (model.n_cells,):
        raise DataError(
            f"mu has length {mu.size}, model covers {model.n_cells} cells")
    return mu


def _apply_floor(draws, floor):
    if floor is not None:
        np.maximum(draws, floor, out=draws)
    return draws


def sample_mc(model: TaperedPcaModel, mu, n_draws: int, seed: int,
              floor=PHYSICAL_FLOOR_C, year: int = 0, month: int = 0) -> ForecastSample:
    """Draws from the multiplicatively corrected model.

    Each draw is mu + diag(xi) U sqrt(L) y with y a d-dimensional standard
    normal vector, then clamped at the floor. Deterministic given the seed;
    pass floor=None to disable clamping.
    """
    if model.correction != MULTIPLICATIVE:
        raise DataError("sample_mc requires a multiplicative-correction model")
    mu = _check_mu(model, mu)
    if n_draws < 1:
        raise DataError("n_draws must be >= 1")
    factor = model.correction_values[:, None] * model.eigvecs * np.sqrt(model.eigvals)
    y = normal_matrix(seed, "mc", n_draws, model.n_components)
    draws = mu[None, :] + y @ factor.T
    return ForecastSample(year, month, _apply_floor(draws, floor))


def sample_ac(model: TaperedPcaModel, mu, n_draws: int, seed: int,
              floor=PHYSICAL_FLOOR_C, year: int = 0, month: int = 0) -> ForecastSample:
    """Draws from the additively corrected model.

    Each draw is mu + U sqrt(L) y + sqrt(eta) * z with y d-dimensional and z
    S-dimensional standard normal. The nugget eta is a variance, so it
    enters the noise as a standard deviation sqrt(eta); this reproduces the
    implied covariance U L U^T + diag(eta) exactly.
    """
    if model.correction != ADDITIVE:
        raise DataError("sample_ac requires an additive-correction model")
    mu = _check_mu(model, mu)
    if n_draws < 1:
        raise DataError("n_draws must be >= 1")
    factor = model.eigvecs * np.sqrt(model.eigvals)
    y = normal_matrix(seed, "ac-factor", n_draws, model.n_components)
    z = normal_matrix(seed, "ac-nugget", n_draws, model.n_cells)
    draws = (mu[None, :] + y @ factor.T
             + z * np.sqrt(model.correction_values)[None, :])
    return ForecastSample(year, month, _apply_floor(draws, floor))


def derived_functional(sample: ForecastSample, functional: str, index_set) -> np.ndarray:
    """Per-draw scalar functional over a set of cells.

    The empirical distribution of the returned length-M vector is the
    probabilistic forecast of the functional (e.g. the minimum temperature
    over the cells of a shipping route).
    """
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise DataError("index set must be non-empty")
    if idx.min() < 0 or idx.max() >= sample.n_cells:
        raise DataError("index set outside the sampled cells")
    sub = sample.draws[:, idx]
    reducers = {"min": np.min, "max": np.max, "mean": np.mean}
    if functional not in reducers:
        raise DataError(f"unknown functional: {functional!r}")
    return reducers[functional](sub, axis=1)
