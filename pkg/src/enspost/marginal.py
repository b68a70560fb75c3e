"""Univariate postprocessing of ensemble forecasts.

Two families of marginal models are provided. The moving-average family
estimates a location-specific bias and predictive variance as weighted
averages of past forecast errors, with simple (SMA) or exponentially
decaying (EMA) weights and a single global weighting parameter tuned
out-of-sample. The regression family (NGR) models the predictive mean and
variance as linear functions of the ensemble mean and ensemble spread, with
coefficients grouped by month, by location, by both, or fitted on anomalies
pooled over locations (locally adaptive).

Every estimator obeys an expanding-window discipline: the model for year y
reads no archive data from year y or later.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, InsufficientHistoryError
from .verify import crps_gaussian, mse

SMA = "sma"
EMA = "ema"

BY_MONTH = "month"
BY_LOCATION = "location"
BY_BOTH = "both"
LOCALLY_ADAPTIVE = "locally_adaptive"

OBJECTIVE_MSE = "mse"
OBJECTIVE_CRPS = "crps"

# predictive standard deviations never drop below this (degrees C)
SIGMA_FLOOR = 1e-6
# moving-average variance estimates are floored here (degrees C squared)
VAR_FLOOR = 1e-6

METHOD_TAGS = {
    BY_MONTH: "NGR_m",
    BY_LOCATION: "NGR_s",
    BY_BOTH: "NGR_ms",
    LOCALLY_ADAPTIVE: "NGR_la",
}

DEFAULT_SMA_GRID = tuple(range(1, 31))
DEFAULT_EMA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 51))

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class WeightScheme:
    """Weighting of past years, by lag k = years back from the target year."""

    kind: str  # SMA or EMA
    param: float  # window length l (SMA) or decay scale a (EMA)

    def __post_init__(self):
        if self.kind not in (SMA, EMA):
            raise ConfigError(f"unknown weight scheme kind: {self.kind!r}")
        if self.kind == SMA:
            if self.param < 1 or self.param != int(self.param):
                raise ConfigError("SMA window length must be a positive integer")
        elif self.param <= 0:
            raise ConfigError("EMA scale must be > 0")

    def weights_for_lags(self, lags) -> np.ndarray:
        """Normalized weights for the given array of positive lags.

        Weights are proportional to 1{k <= l} (SMA) or exp(-a k) (EMA) and
        renormalized over the lags actually available, so truncated history
        at the edge of the record keeps the estimators unbiased averages.
        """
        lags = np.asarray(lags, dtype=float)
        if lags.size == 0 or np.any(lags < 1):
            raise InsufficientHistoryError("no prior years available")
        if self.kind == SMA:
            raw = (lags <= self.param).astype(float)
            if raw.sum() == 0:
                raise InsufficientHistoryError(
                    f"no prior year within the SMA window l={int(self.param)}")
        else:
            # shift before exponentiating: normalization is shift-invariant
            raw = np.exp(-self.param * (lags - lags.min()))
        return raw / raw.sum()

    def weights(self, k_max: int) -> np.ndarray:
        """Weights for lags 1..k_max."""
        return self.weights_for_lags(np.arange(1, k_max + 1))


@dataclass(frozen=True)
class MaSchemes:
    """Pair of weight schemes driving the moving-average marginal model."""

    bias: WeightScheme
    variance: WeightScheme

    @property
    def label(self) -> str:
        if self.bias.kind == self.variance.kind:
            return self.bias.kind.upper()
        return f"{self.bias.kind.upper()}+{self.variance.kind.upper()}"


@dataclass
class MarginalModel:
    """Per-location normal predictive law for one (year, month)."""

    year: int
    month: int
    mu: np.ndarray
    sigma: np.ndarray
    method: str

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.ndim != 1 or self.mu.shape != self.sigma.shape:
            raise DataError("mu and sigma must be equal-length vectors")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise DataError("marginal model contains non-finite values")
        if np.any(self.sigma <= 0):
            raise DataError("sigma must be strictly positive everywhere")

    @property
    def n_cells(self) -> int:
        return self.mu.size


def _prior_years(archive, year):
    return [j for j in archive.years if j < year]


def ma_bias(archive, scheme: WeightScheme, year: int, month: int) -> np.ndarray:
    """Weighted moving-average bias of the ensemble mean, length S.

    bias(y, s) = sum_{j<y} w_{y-j} (fbar(j, s) - t(j, s)) with weights
    renormalized over the prior years present in the archive.
    """
    prior = _prior_years(archive, year)
    if not prior:
        raise InsufficientHistoryError(
            f"no prior year before {year} for month {month}")
    lags = np.array([year - j for j in prior], dtype=float)
    w = scheme.weights_for_lags(lags)
    errors = np.stack([archive.ensemble_mean(j, month) - archive.observation(j, month)
                       for j in prior])
    return w @ errors


def ma_variance(archive, scheme: WeightScheme, bias_scheme: WeightScheme,
                year: int, month: int, var_floor: float = VAR_FLOOR) -> np.ndarray:
    """Weighted moving-average predictive variance, length S.

    var(y, s) = sum_{j<y} w_{y-j} (t(j, s) - (fbar(j, s) - bias(j, s)))^2,
    where bias(j, s) is the bias estimate that was available at year j
    (computed from years before j only). Years without enough history for
    their own bias estimate are skipped; the result is floored at var_floor.
    """
    prior = _prior_years(archive, year)
    if len(prior) < 2:
        raise InsufficientHistoryError(
            f"variance estimation for {year} needs at least 2 prior years")
    usable, residuals = [], []
    for j in prior:
        try:
            b_j = ma_bias(archive, bias_scheme, j, month)
        except InsufficientHistoryError:
            continue
        usable.append(j)
        residuals.append(archive.observation(j, month)
                         - (archive.ensemble_mean(j, month) - b_j))
    if not usable:
        raise InsufficientHistoryError(
            f"no prior year before {year} has a usable bias estimate")
    lags = np.array([year - j for j in usable], dtype=float)
    w = scheme.weights_for_lags(lags)
    var = w @ (np.stack(residuals) ** 2)
    return np.maximum(var, var_floor)


def _triangular_weights(scheme, n_years):
    """(n_years, n_years) matrix W with W[e, i] = w_{e-i} for i < e, else 0."""
    w = np.zeros((n_years, n_years))
    for e in range(1, n_years):
        lags = np.arange(e, 0, -1, dtype=float)
        try:
            w[e, :e] = scheme.weights_for_lags(lags)
        except InsufficientHistoryError:
            pass  # row stays zero; marked unusable by the caller
    return w


def tune_weights(archive, objective: str, kind: str, search_grid,
                 target_year: int, month_set, bias_scheme: WeightScheme = None) -> WeightScheme:
    """Pick the weighting parameter minimizing an out-of-sample objective.

    For each candidate parameter, the estimator is evaluated at every year
    before target_year that has enough history, over all locations and all
    months in month_set, and the candidate with the lowest mean objective
    wins. Ties go to the shorter effective memory: smaller window length for
    SMA, larger decay scale for EMA.

    objective "mse" scores the bias-corrected ensemble mean and tunes the
    bias weights; "crps" scores the full normal predictive law and tunes the
    variance weights, which requires bias_scheme for the mean part.
    """
    grid = list(search_grid)
    if not grid:
        raise ConfigError("empty weight search grid")
    if objective not in (OBJECTIVE_MSE, OBJECTIVE_CRPS):
        raise ConfigError(f"unknown tuning objective: {objective!r}")
    if objective == OBJECTIVE_CRPS and bias_scheme is None:
        raise ConfigError("CRPS tuning needs a bias_scheme for the mean part")

    years = [j for j in archive.years if j < target_year]
    n_years = len(years)
    min_hist = 1 if objective == OBJECTIVE_MSE else 2
    eval_rows = list(range(min_hist, n_years))
    if not eval_rows:
        raise InsufficientHistoryError(
            f"no out-of-sample year available before {target_year}")

    # per-month data matrices, rows follow `years`
    data = {}
    for m in month_set:
        err = np.stack([archive.ensemble_mean(j, m) - archive.observation(j, m)
                        for j in years])
        data[m] = err
    if objective == OBJECTIVE_CRPS:
        fixed_w = _triangular_weights(bias_scheme, n_years)
        resid_sq = {}
        for m in month_set:
            bias_hat = fixed_w @ data[m]
            resid_sq[m] = (bias_hat - data[m]) ** 2  # t - (fbar - bias)

    def variance_weights(w):
        # the first year has no own bias estimate, so its residual is
        # unusable; drop it and renormalize, mirroring ma_variance
        wv = w.copy()
        wv[:, 0] = 0.0
        rows = wv.sum(axis=1)
        rows[rows == 0] = 1.0
        return wv / rows[:, None]

    # iterate in tie-break order; strict improvement keeps the first optimum
    ordered = sorted(grid) if kind == SMA else sorted(grid, reverse=True)
    best_param, best_score = None, np.inf
    for param in ordered:
        scheme = WeightScheme(kind, param)
        w = _triangular_weights(scheme, n_years)
        total, count = 0.0, 0
        for m in month_set:
            if objective == OBJECTIVE_MSE:
                bias_hat = w @ data[m]
                sq = mse(data[m][eval_rows] - bias_hat[eval_rows], 0.0)
            else:
                var = np.maximum((variance_weights(w) @ resid_sq[m])[eval_rows],
                                 VAR_FLOOR)
                mu_err = data[m][eval_rows] - (fixed_w @ data[m])[eval_rows]
                sq = crps_gaussian(mu_err, np.sqrt(var), 0.0)
            total += sq.sum()
            count += sq.size
        score = total / count
        if score < best_score:
            best_param, best_score = param, score
    return WeightScheme(kind, best_param)


@dataclass
class NgrCoefficients:
    """Regression coefficients mu = a + b * fbar, var = c^2 + d^2 * spread^2.

    a, b, c, d are scalars for month-level groupings and length-S vectors
    for location-level groupings. `degenerate` flags groups where the
    predictor was constant and the fit fell back to a climatological mean.
    """

    grouping: str
    month: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        if self.grouping not in METHOD_TAGS:
            raise ConfigError(f"unknown NGR grouping: {self.grouping!r}")

    @property
    def method(self) -> str:
        return METHOD_TAGS[self.grouping]


def _ols_rows(x, y):
    """Row-wise least squares y ~ a + b x for (G, n) matrices.

    Rows with a numerically constant predictor fall back to b = 0 and
    a = mean(y) (the minimum-norm solution) and are flagged.
    """
    xm = x.mean(axis=1)
    ym = y.mean(axis=1)
    xc = x - xm[:, None]
    sxx = (xc ** 2).mean(axis=1)
    sxy = (xc * (y - ym[:, None])).mean(axis=1)
    degenerate = sxx <= 1e-12 * np.maximum(1.0, (x ** 2).mean(axis=1))
    b = np.where(degenerate, 0.0, sxy / np.where(degenerate, 1.0, sxx))
    a = ym - b * xm
    return a, b, degenerate


def _cd_objective(c, d, mu, s2, t):
    var = np.maximum(c[:, None] ** 2 + d[:, None] ** 2 * s2, SIGMA_FLOOR ** 2)
    return crps_gaussian(mu, np.sqrt(var), t).mean(axis=1)


def _golden_axis(fun, lo, hi, iters=40):
    """Vectorized golden-section minimization over per-group brackets."""
    for _ in range(iters):
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        pick = fun(x1) < fun(x2)
        hi = np.where(pick, x2, hi)
        lo = np.where(pick, lo, x1)
    return (lo + hi) / 2.0


def _fit_cd(mu, s2, t):
    """CRPS-minimizing (c, d) with c, d >= 0, per group (row).

    Bounded coordinate search: golden-section on each axis, alternated three
    times, then a local joint grid refinement. The bracket widths shrink the
    objective uncertainty well below 1e-6.
    """
    resid_sd = np.sqrt(np.maximum(((t - mu) ** 2).mean(axis=1), SIGMA_FLOOR ** 2))
    c_hi = 3.0 * resid_sd + 1e-3
    d_hi = 3.0 * resid_sd / np.sqrt(np.maximum(s2.mean(axis=1), SIGMA_FLOOR ** 2)) + 1e-3
    zero = np.zeros_like(c_hi)

    c = resid_sd.copy()
    d = zero.copy()
    for _ in range(3):
        c = _golden_axis(lambda x: _cd_objective(x, d, mu, s2, t), zero.copy(), c_hi.copy())
        d = _golden_axis(lambda x: _cd_objective(c, x, mu, s2, t), zero.copy(), d_hi.copy())

    best = _cd_objective(c, d, mu, s2, t)
    offsets = np.linspace(-0.05, 0.05, 9)
    for dc in offsets:
        for dd in offsets:
            cc = np.clip(c + dc * c_hi, 0.0, c_hi)
            dd_ = np.clip(d + dd * d_hi, 0.0, d_hi)
            val = _cd_objective(cc, dd_, mu, s2, t)
            better = val < best
            c = np.where(better, cc, c)
            d = np.where(better, dd_, d)
            best = np.where(better, val, best)
    return np.maximum(c, SIGMA_FLOOR), d


def _collect(archive, years, months):
    """Stacked (fbar, spread^2, obs) arrays of shape (len(years)*len(months), S)."""
    fbar, s2, obs = [], [], []
    for j in years:
        for m in months:
            ens = archive.forecast(j, m)
            fbar.append(ens.mean(axis=0))
            s2.append(ens.var(axis=0, ddof=1))
            obs.append(archive.observation(j, m))
    return np.stack(fbar), np.stack(s2), np.stack(obs)


def fit_ngr(archive, grouping: str, train_years, month: int) -> NgrCoefficients:
    """Fit NGR coefficients on the given training years.

    Grouping controls pooling: "month" fits one coefficient set from all
    locations of the given month; "location" fits per-location sets pooled
    over every month in the archive (the month argument only tags the
    result); "both" fits per-location sets for the given month; and
    "locally_adaptive" regresses observation anomalies on ensemble-mean
    anomalies pooled over locations, which removes location-specific level
    differences with a single coefficient pair.

    a and b come from ordinary least squares; c and d minimize the mean
    Gaussian CRPS over the training samples subject to c, d >= 0.
    """
    train_years = sorted(train_years)
    if grouping not in METHOD_TAGS:
        raise ConfigError(f"unknown NGR grouping: {grouping!r}")

    if grouping == LOCALLY_ADAPTIVE:
        return _fit_ngr_locally_adaptive(archive, train_years, month)

    months = list(archive.months) if grouping == BY_LOCATION else [month]
    fbar, s2, obs = _collect(archive, train_years, months)
    n_samples, n_cells = fbar.shape

    if grouping == BY_MONTH:
        x = fbar.reshape(1, -1)
        sp = s2.reshape(1, -1)
        y = obs.reshape(1, -1)
    else:  # per-location rows
        x = fbar.T
        sp = s2.T
        y = obs.T
    if x.shape[1] < 3:
        raise InsufficientHistoryError(
            f"NGR needs at least 3 training samples per group, got {x.shape[1]}")

    a, b, degenerate = _ols_rows(x, y)
    mu = a[:, None] + b[:, None] * x
    c, d = _fit_cd(mu, sp, y)

    if grouping == BY_MONTH:
        a, b, c, d = (np.float64(v[0]) for v in (a, b, c, d))
        degenerate = np.bool_(degenerate[0])
    return NgrCoefficients(grouping=grouping, month=month,
                           a=a, b=b, c=c, d=d, degenerate=degenerate)


def _anomaly_parts(archive, year, month):
    """Ensemble-mean anomaly and observed climatology for one target year."""
    prior = _prior_years(archive, year)
    if not prior:
        raise InsufficientHistoryError(
            f"anomalies for {year} need at least one prior year")
    fbar_clim = np.mean([archive.ensemble_mean(j, month) for j in prior], axis=0)
    t_clim = np.mean([archive.observation(j, month) for j in prior], axis=0)
    fbar_ano = archive.ensemble_mean(year, month) - fbar_clim
    return fbar_ano, t_clim


def _fit_ngr_locally_adaptive(archive, train_years, month):
    xs, sps, ys, mus_clim = [], [], [], []
    for j in train_years:
        try:
            fbar_ano, t_clim = _anomaly_parts(archive, j, month)
        except InsufficientHistoryError:
            continue
        ens = archive.forecast(j, month)
        xs.append(fbar_ano)
        sps.append(ens.var(axis=0, ddof=1))
        ys.append(archive.observation(j, month) - t_clim)
        mus_clim.append(t_clim)
    if len(xs) * (xs[0].size if xs else 0) < 3:
        raise InsufficientHistoryError(
            "locally adaptive NGR needs at least 3 usable training samples")
    x = np.concatenate(xs)[None, :]
    sp = np.concatenate(sps)[None, :]
    y_ano = np.concatenate(ys)[None, :]
    a, b, degenerate = _ols_rows(x, y_ano)
    # CRPS fit sees absolute observations: mu = a + b*ano + climatology
    mu = a[:, None] + b[:, None] * x + np.concatenate(mus_clim)[None, :]
    y_abs = y_ano + np.concatenate(mus_clim)[None, :]
    c, d = _fit_cd(mu, sp, y_abs)
    return NgrCoefficients(grouping=LOCALLY_ADAPTIVE, month=month,
                           a=np.float64(a[0]), b=np.float64(b[0]),
                           c=np.float64(c[0]), d=np.float64(d[0]),
                           degenerate=np.bool_(degenerate[0]))


def predictive_marginal(model_spec, archive, year: int, month: int) -> MarginalModel:
    """Marginal predictive law for (year, month) from either model family.

    model_spec is an :class:`MaSchemes` (moving-average path, mean equals
    the bias-corrected ensemble mean) or an :class:`NgrCoefficients`. No
    truncation is applied here; clamping at the physical floor happens when
    sampling or evaluating.
    """
    if isinstance(model_spec, MaSchemes):
        bias = ma_bias(archive, model_spec.bias, year, month)
        var = ma_variance(archive, model_spec.variance, model_spec.bias, year, month)
        mu = archive.ensemble_mean(year, month) - bias
        sigma = np.maximum(np.sqrt(var), SIGMA_FLOOR)
        return MarginalModel(year, month, mu, sigma, model_spec.label)

    if isinstance(model_spec, NgrCoefficients):
        ens = archive.forecast(year, month)
        fbar = ens.mean(axis=0)
        s2 = ens.var(axis=0, ddof=1)
        if model_spec.grouping == LOCALLY_ADAPTIVE:
            fbar_ano, t_clim = _anomaly_parts(archive, year, month)
            mu = model_spec.a + model_spec.b * fbar_ano + t_clim
        else:
            mu = model_spec.a + model_spec.b * fbar
        var = model_spec.c ** 2 + model_spec.d ** 2 * s2
        sigma = np.maximum(np.sqrt(var), SIGMA_FLOOR)
        return MarginalModel(year, month, np.broadcast_to(mu, fbar.shape).copy(),
                             np.broadcast_to(sigma, fbar.shape).copy(),
                             model_spec.method)

    raise ConfigError(f"unsupported marginal model spec: {type(model_spec).__name__}")
