"""Scores and calibration diagnostics for predictive distributions.

Univariate: mean squared error, CRPS in closed Gaussian form and in exact
ensemble form, probability integral transforms. Multivariate: the variogram
score of order p and rank histograms built from average and band-depth
pre-ranks. Significance of paired score differences is assessed with a
sign-flip permutation test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._rng import substream
from .errors import DataError

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)

AVERAGE = "average"
BAND_DEPTH = "band_depth"


def mse(mu, t):
    """Squared error of the predictive mean, (mu - t)^2."""
    return (np.asarray(mu, dtype=float) - np.asarray(t, dtype=float)) ** 2


def crps_gaussian(mu, sigma, t):
    """CRPS of a normal predictive distribution, closed form.

    crps = sigma * (z * (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)) with
    z = (t - mu) / sigma. Broadcasts over array inputs.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(sigma <= 0):
        raise DataError("sigma must be strictly positive")
    z = (t - mu) / sigma
    out = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


def crps_ensemble(x, t) -> float:
    """CRPS of an empirical ensemble forecast, exact value.

    Uses the O(N log N) sorted identity for the spread term; it agrees with
    the quadratic double sum (1/N) sum|x_k - t| - (1/2N^2) sum sum|x_k - x_l|
    to floating-point accuracy.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise DataError("ensemble is empty")
    xs = np.sort(x)
    term1 = np.mean(np.abs(xs - t))
    # sum over ordered pairs of |x_k - x_l| = 2 * sum_i (2i - n - 1) x_(i)
    coef = 2.0 * np.arange(1, n + 1) - n - 1
    term2 = np.dot(coef, xs) / (n * n)
    return float(term1 - term2)


def pit(mu, sigma, t, floor=None, rng=None):
    """Probability integral transform of a (floor-clamped) normal margin.

    Without a floor this is Phi((t - mu) / sigma). With a floor the
    predictive law has a point mass at the floor; an observation exactly at
    the floor is mapped to a uniform draw on [0, F(floor)] so that calibrated
    forecasts still produce uniform PITs. Broadcasts over arrays.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(sigma <= 0):
        raise DataError("sigma must be strictly positive")
    p = norm.cdf((t - mu) / sigma)
    if floor is not None:
        at_floor = t <= floor
        if np.any(at_floor):
            if rng is None:
                rng = substream(0, "pit")
            mass = norm.cdf((floor - mu) / sigma)
            u = rng.uniform(size=p.shape if p.ndim else None)
            p = np.where(at_floor, u * mass, p)
    return float(p) if np.ndim(p) == 0 else p


def pit_moments(pits):
    """Sample mean and standard deviation of a PIT collection."""
    pits = np.asarray(pits, dtype=float)
    return float(pits.mean()), float(pits.std())


def variogram_score(draws, obs, p: float = 0.5, draw_chunk: int = 64) -> float:
    """Variogram score of order p with constant unit weights.

    E|X_i - X_j|^p is estimated by the mean over the supplied forecast
    draws; the score sums (|t_i - t_j|^p - E|X_i - X_j|^p)^2 over all
    ordered location pairs. Draws are processed in chunks to bound memory.
    """
    draws = np.asarray(draws, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if draws.ndim != 2:
        raise DataError("draws must be M x S")
    m, s = draws.shape
    if m < 2:
        raise DataError("need at least 2 draws")
    if s < 2 or obs.shape != (s,):
        raise DataError("obs must have length S >= 2 matching draws")
    acc = np.zeros((s, s))
    for i in range(0, m, draw_chunk):
        block = draws[i:i + draw_chunk]
        acc += np.abs(block[:, :, None] - block[:, None, :]).__pow__(p).sum(axis=0)
    expected = acc / m
    observed = np.abs(obs[:, None] - obs[None, :]) ** p
    return float(((observed - expected) ** 2).sum())


def _pooled_ranks(obs, ensemble, rng):
    """Univariate ranks 1..M+1 of obs+members at each cell, random ties."""
    pool = np.vstack([obs[None, :], ensemble])
    jitter = rng.random(pool.shape)
    order = np.lexsort((jitter, pool), axis=0)
    ranks = np.empty(pool.shape, dtype=np.int64)
    np.put_along_axis(
        ranks, order,
        np.broadcast_to(np.arange(1, pool.shape[0] + 1)[:, None], pool.shape),
        axis=0)
    return ranks


def _final_rank(preranks, rng) -> int:
    """Rank of item 0 among all pre-ranks, ties broken at random."""
    order = np.lexsort((rng.random(preranks.size), preranks))
    return int(np.nonzero(order == 0)[0][0] + 1)


def _multivariate_rank(obs, ensemble, seed, kind):
    obs = np.asarray(obs, dtype=float)
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim != 2 or obs.shape != (ensemble.shape[1],):
        raise DataError("ensemble must be M x S with obs of length S")
    if ensemble.shape[0] < 2:
        raise DataError("need at least 2 ensemble members")
    rng = substream(seed, "mvrank")
    r = _pooled_ranks(obs, ensemble, rng)
    m1 = ensemble.shape[0] + 1
    if kind == AVERAGE:
        pre = r.mean(axis=1)
    else:
        pre = ((m1 - r) * (r - 1)).mean(axis=1)
    return _final_rank(pre, rng)


def average_rank(obs, ensemble, seed: int = 0) -> int:
    """Multivariate rank of obs via the average pre-rank, in 1..M+1."""
    return _multivariate_rank(obs, ensemble, seed, AVERAGE)


def band_depth_rank(obs, ensemble, seed: int = 0) -> int:
    """Multivariate rank of obs via simplified band depth, in 1..M+1.

    The pre-rank of an item with univariate rank r at a cell is
    (M+1-r)(r-1) averaged over cells, so extreme items get depth zero and
    central items the largest values.
    """
    return _multivariate_rank(obs, ensemble, seed, BAND_DEPTH)


def permutation_test(scores_1, scores_2, n_perm: int = 1000, seed: int = 0) -> float:
    """Two-sided sign-flip permutation test for paired score series.

    The statistic is the mean paired difference; each resample flips the
    sign of every difference independently with probability one half. The
    returned p-value is (1 + #{|s*| >= |s|}) / (n_perm + 1).
    """
    d = np.asarray(scores_1, dtype=float) - np.asarray(scores_2, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise DataError("score series must be equal-length non-empty vectors")
    if n_perm < 1:
        raise DataError("n_perm must be >= 1")
    s = d.mean()
    rng = substream(seed, "perm")
    signs = rng.integers(0, 2, size=(n_perm, d.size)) * 2 - 1
    s_star = (signs * d).mean(axis=1)
    return float((1 + np.count_nonzero(np.abs(s_star) >= abs(s))) / (n_perm + 1))


@dataclass
class ScoreReport:
    """Per-(year, month) values of one score for one method."""

    method: str
    score_kind: str
    entries: list = field(default_factory=list)  # (year, month, value)

    def __post_init__(self):
        for _, _, v in self.entries:
            if not np.isfinite(v):
                raise DataError(f"non-finite score in report {self.method}/{self.score_kind}")

    def add(self, year: int, month: int, value: float):
        if not np.isfinite(value):
            raise DataError(f"non-finite score for ({year}, {month})")
        self.entries.append((int(year), int(month), float(value)))

    def values(self) -> np.ndarray:
        return np.array([v for _, _, v in self.entries], dtype=float)

    @property
    def aggregate(self) -> float:
        return float(self.values().mean())


def write_score_reports(reports, path):
    """Serialize reports as 'method,year,month,score,value' lines."""
    lines = ["method,year,month,score,value"]
    for rep in reports:
        for year, month, value in rep.entries:
            lines.append(f"{rep.method},{year},{month},{rep.score_kind},{value!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_score_reports(path):
    """Inverse of :func:`write_score_reports`; returns a list of reports."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "method,year,month,score,value":
        raise DataError(f"not a score report file: {path}")
    table = {}
    for ln in lines[1:]:
        method, year, month, kind, value = ln.split(",")
        rep = table.setdefault((method, kind), ScoreReport(method, kind))
        rep.add(int(year), int(month), float(value))
    return list(table.values())


@dataclass
class RankHistogram:
    """Binned counts of multivariate observation ranks."""

    kind: str
    counts: np.ndarray
    n_items: int  # number of possible ranks, M + 1

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.kind not in (AVERAGE, BAND_DEPTH):
            raise DataError(f"unknown pre-rank kind: {self.kind!r}")
        if self.counts.size < 2:
            raise DataError("histogram needs at least 2 bins")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def default_bin_count(n_items: int) -> int:
    """Bin count rule for scarce observations: max(5, (M+1)//2), capped."""
    return min(n_items, max(5, n_items // 2))


def rank_histogram(ranks, n_items: int, kind: str, n_bins=None) -> RankHistogram:
    """Pool integer ranks 1..n_items into equal bins."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise DataError("no ranks supplied")
    if ranks.min() < 1 or ranks.max() > n_items:
        raise DataError("ranks outside 1..n_items")
    if n_bins is None:
        n_bins = default_bin_count(n_items)
    edges = np.linspace(0.5, n_items + 0.5, n_bins + 1)
    counts, _ = np.histogram(ranks, bins=edges)
    return RankHistogram(kind=kind, counts=counts, n_items=n_items)


def write_rank_histograms(histograms, path):
    """Serialize histograms as 'kind,n_items,count0,count1,...' lines."""
    lines = ["kind,n_items,counts"]
    for h in histograms:
        joined = ";".join(str(c) for c in h.counts)
        lines.append(f"{h.kind},{h.n_items},{joined}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
