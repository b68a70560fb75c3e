"""Stationary isotropic reference model: exponential correlation with nugget.

The correlation between cells i and j is (1 - theta) exp(-d_ij / r) plus a
nugget theta on the diagonal. theta and r are fitted by weighted least
squares of the parametric variogram gamma(h) = theta + (1 - theta)
(1 - exp(-h / r)) against the empirical variogram of standardized residuals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ._rng import normal_matrix
from .constants import PHYSICAL_FLOOR_C
from .errors import DataError, NumericalError
from .sampler import ForecastSample

DEFAULT_N_BINS = 30
# bins span distances up to this quantile; longer pairs are few and noisy
BIN_QUANTILE = 0.9


@dataclass
class ExpNuggetModel:
    """Fitted exponential-with-nugget correlation plus marginal scales."""

    theta: float
    range_km: float
    sigmas: np.ndarray = None  # length-S marginal standard deviations

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0):
            raise DataError("theta must lie in [0, 1]")
        if self.range_km <= 0:
            raise DataError("range must be > 0")
        if self.sigmas is not None:
            self.sigmas = np.asarray(self.sigmas, dtype=float)
            if np.any(self.sigmas <= 0):
                raise DataError("marginal sigmas must be positive")

    def correlation(self, distances: np.ndarray) -> np.ndarray:
        """Correlation matrix for the given distance matrix (unit diagonal)."""
        distances = np.asarray(distances, dtype=float)
        c = (1.0 - self.theta) * np.exp(-distances / self.range_km)
        c[np.eye(c.shape[0], dtype=bool)] = 1.0
        return c

    def variogram(self, h):
        """Semivariance theta + (1 - theta)(1 - exp(-h / r)) for h > 0."""
        h = np.asarray(h, dtype=float)
        return self.theta + (1.0 - self.theta) * (1.0 - np.exp(-h / self.range_km))


def empirical_variogram(panel: np.ndarray, distances: np.ndarray, bins=DEFAULT_N_BINS):
    """Binned empirical semivariogram of a standardized residual panel.

    panel is Y x S with unit marginal variance (rows are years). For each
    distance bin the semivariance is the mean of 0.5 (res_i - res_j)^2 over
    all unordered cell pairs in the bin and all years. Returns
    (bin centers, semivariances, pair counts); empty bins are dropped.

    bins may be an integer count (equal-width bins from 0 to the 0.9
    distance quantile) or an explicit array of bin edges.
    """
    panel = np.asarray(panel, dtype=float)
    distances = np.asarray(distances, dtype=float)
    if panel.ndim != 2 or panel.shape[0] < 1:
        raise DataError("panel must be Y x S")
    s = panel.shape[1]
    if distances.shape != (s, s):
        raise DataError("distances must be S x S matching the panel")

    iu, ju = np.triu_indices(s, k=1)
    if iu.size == 0:
        raise DataError("variogram needs at least 2 cells")
    pair_dist = distances[iu, ju]
    # mean over years of squared increments, per pair
    sq = 0.5 * np.mean((panel[:, iu] - panel[:, ju]) ** 2, axis=0)

    if np.isscalar(bins):
        hi = np.quantile(pair_dist, BIN_QUANTILE)
        if hi <= 0:
            hi = pair_dist.max()
        edges = np.linspace(0.0, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    which = np.digitize(pair_dist, edges) - 1
    inside = (which >= 0) & (which < len(edges) - 1)

    centers, values, counts = [], [], []
    for b in range(len(edges) - 1):
        sel = inside & (which == b)
        n = int(np.count_nonzero(sel))
        if n == 0:
            continue
        centers.append((edges[b] + edges[b + 1]) / 2.0)
        values.append(float(sq[sel].mean()))
        counts.append(n)
    if not centers:
        raise DataError("all variogram bins are empty")
    return np.array(centers), np.array(values), np.array(counts, dtype=np.int64)


def fit_exp_nugget(bin_centers, semivariances, pair_counts,
                   sigmas=None) -> ExpNuggetModel:
    """Weighted least-squares fit of (theta, r) to an empirical variogram.

    Minimizes sum_b n_b (gamma_hat_b - gamma_{theta,r}(h_b))^2 over
    theta in [0, 1] and r in (0, 2 max h]: a coarse grid over theta and
    log r, then a bounded local refinement. If the refinement fails the best
    grid point is returned with a warning.
    """
    h = np.asarray(bin_centers, dtype=float)
    g = np.asarray(semivariances, dtype=float)
    n = np.asarray(pair_counts, dtype=float)
    if h.size < 3:
        raise DataError("variogram fit needs at least 3 non-empty bins")
    r_max = 2.0 * h.max()
    r_min = 1e-6 * r_max

    def sse(theta, r):
        gamma = theta + (1.0 - theta) * (1.0 - np.exp(-h / r))
        return float((n * (g - gamma) ** 2).sum())

    thetas = np.linspace(0.0, 1.0, 21)
    rs = np.exp(np.linspace(np.log(max(r_min, h.min() / 10 + 1e-9)),
                            np.log(r_max), 40))
    best = None
    for th in thetas:
        for r in rs:
            val = sse(th, r)
            if best is None or val < best[0]:
                best = (val, th, r)
    _, th0, r0 = best

    res = minimize(lambda x: sse(x[0], x[1]), x0=[th0, r0],
                   bounds=[(0.0, 1.0), (r_min, r_max)],
                   method="L-BFGS-B", options={"ftol": 1e-12, "gtol": 1e-10})
    if res.success and sse(res.x[0], res.x[1]) <= best[0]:
        theta, r = float(res.x[0]), float(res.x[1])
    else:
        warnings.warn("variogram refinement failed; using best grid point")
        theta, r = th0, r0
    return ExpNuggetModel(theta=theta, range_km=r, sigmas=sigmas)


def sample_geostat(model: ExpNuggetModel, mu, distances, n_draws: int, seed: int,
                   floor=PHYSICAL_FLOOR_C, year: int = 0, month: int = 0) -> ForecastSample:
    """Draws from N(mu, D C D) with D = diag(sigmas), via dense Cholesky.

    A single jitter of 1e-10 on the diagonal is attempted if the
    factorization fails; a second failure raises.
    """
    if model.sigmas is None:
        raise DataError("model has no marginal sigmas attached")
    mu = np.asarray(mu, dtype=float)
    s = mu.size
    if model.sigmas.shape != (s,):
        raise DataError("mu and model sigmas disagree in length")
    if n_draws < 1:
        raise DataError("n_draws must be >= 1")
    cov = (model.sigmas[:, None] * model.correlation(distances)
           * model.sigmas[None, :])
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(cov + 1e-10 * np.eye(s))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance factorization failed") from exc
    z = normal_matrix(seed, "geostat", n_draws, s)
    draws = mu[None, :] + z @ chol.T
    if floor is not None:
        np.maximum(draws, floor, out=draws)
    return ForecastSample(year, month, draws)
