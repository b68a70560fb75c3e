"""Empirical-copula reference methods: ECC and the Schaake shuffle.

Both build a discrete calibrated ensemble from equally spaced quantiles of
the marginal predictive law and reorder it per location to copy the rank
structure of a template: the raw forecast ensemble (ECC) or a panel of past
observed fields (Schaake shuffle). The output ensemble size equals the
template size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._rng import substream
from .constants import PHYSICAL_FLOOR_C
from .errors import DataError
from .marginal import MarginalModel


@dataclass
class RankTemplate:
    """Per-location rank structure extracted from a template ensemble.

    ranks[i, s] is the 0-based rank of template member i at location s,
    with ties broken by a seeded uniformly random permutation.
    """

    source: str  # "raw-ensemble" or "historical-observations"
    ranks: np.ndarray  # (N, S) ints in 0..N-1

    @property
    def n_members(self) -> int:
        return self.ranks.shape[0]


def extract_ranks(template: np.ndarray, source: str, seed: int = 0) -> RankTemplate:
    """Rank each template column, randomizing ties with the seeded stream."""
    template = np.asarray(template, dtype=float)
    if template.ndim != 2 or template.shape[0] < 2:
        raise DataError("template must be N x S with N >= 2")
    rng = substream(seed, "copula", source)
    jitter = rng.random(template.shape)
    order = np.lexsort((jitter, template), axis=0)
    ranks = np.empty(template.shape, dtype=np.int64)
    np.put_along_axis(
        ranks, order,
        np.broadcast_to(np.arange(template.shape[0])[:, None], template.shape),
        axis=0)
    return RankTemplate(source=source, ranks=ranks)


def _requantile(marginal: MarginalModel, template: RankTemplate, floor) -> np.ndarray:
    """Quantiles of the marginal law arranged in the template's rank order."""
    n = template.n_members
    if template.ranks.shape[1] != marginal.n_cells:
        raise DataError("template and marginal model cover different cells")
    probs = np.arange(1, n + 1) / (n + 1.0)
    # quantiles[k, s] = mu_s + sigma_s * z_{(k+1)/(n+1)}, ascending in k
    quantiles = (marginal.mu[None, :]
                 + marginal.sigma[None, :] * norm.ppf(probs)[:, None])
    out = np.take_along_axis(quantiles, template.ranks, axis=0)
    if floor is not None:
        np.maximum(out, floor, out=out)
    return out


def ecc(marginal: MarginalModel, raw_ensemble: np.ndarray,
        floor=PHYSICAL_FLOOR_C, seed: int = 0) -> np.ndarray:
    """Ensemble copula coupling: recalibrated members, raw rank structure.

    Member i at location s receives the quantile of the calibrated marginal
    whose rank matches the rank of raw member i at s, so the per-location
    rank order of the output equals that of the raw ensemble exactly.
    """
    template = extract_ranks(raw_ensemble, "raw-ensemble", seed)
    return _requantile(marginal, template, floor)


def schaake(marginal: MarginalModel, historical_obs: np.ndarray,
            floor=PHYSICAL_FLOOR_C, seed: int = 0) -> np.ndarray:
    """Schaake shuffle: recalibrated members, historical rank structure.

    Identical to ECC with past observed fields as the template; the output
    ensemble has one member per historical year.
    """
    template = extract_ranks(historical_obs, "historical-observations", seed)
    return _requantile(marginal, template, floor)
