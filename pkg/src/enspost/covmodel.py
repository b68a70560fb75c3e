"""Regularized covariance models for forecast residual fields.

The pipeline is: sample covariance of past residuals -> distance tapering
with a compactly supported correlation function -> eigendecomposition
truncated to the leading components -> a marginal correction that restores
the variances estimated by the univariate model. Two corrections are
supported: a multiplicative rescaling (PCA runs on the correlation matrix)
and an additive diagonal nugget (PCA runs on the covariance matrix).

Only the truncated factors are ever stored; the dense S x S matrix exists
transiently during fitting and can be reconstructed on demand for
verification at small S.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

# eigenvalues below this fraction of the largest are numerical-rank noise
EIG_DROP_REL = 1e-12
# sample variances below this cannot be converted to correlations
VAR_EPS = 1e-12

MULTIPLICATIVE = "multiplicative"
ADDITIVE = "additive"


@dataclass(frozen=True)
class CovConfig:
    """Tuning knobs of the covariance regularization."""

    taper_range_km: float = 2500.0
    retained_fraction: float = 0.90

    def __post_init__(self):
        if self.taper_range_km <= 0:
            raise DataError("taper_range_km must be > 0")
        if not (0.0 < self.retained_fraction <= 1.0):
            raise DataError("retained_fraction must be in (0, 1]")


@dataclass
class ResidualPanel:
    """Residuals t - mu of past years for one calendar month.

    values has Y rows (years, oldest first) and S columns (sea cells).
    The residual model is mean-zero by construction, so rows are stored raw
    and never re-centered.
    """

    month: int
    years: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DataError("residual panel must be 2-D (years x cells)")
        if v.shape[0] < 2:
            raise DataError("residual panel needs at least 2 years")
        if v.shape[0] != len(self.years):
            raise DataError("years and rows of the panel disagree")
        if not np.all(np.isfinite(v)):
            raise DataError("residual panel contains non-finite values")
        self.values = v

    @property
    def n_years(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]


@dataclass
class TaperedPcaModel:
    """Truncated eigenstructure plus marginal correction.

    For the multiplicative correction the implied covariance is
    diag(xi) @ (U L U^T) @ diag(xi); for the additive correction it is
    U L U^T + diag(eta). eigvecs holds U^(d) (S x d, orthonormal columns)
    and eigvals the decreasing positive eigenvalues L^(d).
    """

    month: int
    eigvecs: np.ndarray
    eigvals: np.ndarray
    correction: str
    correction_values: np.ndarray  # xi (multiplicative) or eta (additive)
    taper_range_km: float
    retained_fraction: float
    zero_variance_cells: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        self.eigvecs = np.asarray(self.eigvecs, dtype=float)
        self.eigvals = np.asarray(self.eigvals, dtype=float)
        self.correction_values = np.asarray(self.correction_values, dtype=float)
        if self.correction not in (MULTIPLICATIVE, ADDITIVE):
            raise DataError(f"unknown correction kind: {self.correction!r}")
        if self.eigvecs.ndim != 2 or self.eigvals.ndim != 1:
            raise DataError("eigvecs must be S x d and eigvals length d")
        if self.eigvecs.shape[1] != self.eigvals.size:
            raise DataError("eigvecs/eigvals dimension mismatch")
        if self.eigvals.size:
            if np.any(self.eigvals <= 0):
                raise DataError("eigvals must be strictly positive")
            if np.any(np.diff(self.eigvals) > 0):
                raise DataError("eigvals must be in decreasing order")
        if self.correction_values.shape != (self.eigvecs.shape[0],):
            raise DataError("correction vector must have length S")

    @property
    def n_cells(self) -> int:
        return self.eigvecs.shape[0]

    @property
    def n_components(self) -> int:
        return self.eigvals.size

    def reconstruct(self) -> np.ndarray:
        """Dense implied covariance matrix. Only sensible at small S."""
        u = self.eigvecs
        core = (u * self.eigvals) @ u.T
        if self.correction == MULTIPLICATIVE:
            xi = self.correction_values
            return xi[:, None] * core * xi[None, :]
        return core + np.diag(self.correction_values)

    def implied_diagonal(self) -> np.ndarray:
        """Diagonal of the implied covariance without forming the matrix."""
        core_diag = np.einsum("sd,d,sd->s", self.eigvecs, self.eigvals,
                              self.eigvecs)
        if self.correction == MULTIPLICATIVE:
            return self.correction_values ** 2 * core_diag
        return core_diag + self.correction_values


def sample_cov(panel: ResidualPanel) -> np.ndarray:
    """Sample covariance matrix of the residual panel, without centering.

    S(i, j) = sum_y res[y, i] * res[y, j] / (Y - 1). The residual model
    fixes the mean at zero, so deviations are taken from zero rather than
    from the sample mean.
    """
    v = panel.values
    return v.T @ v / (panel.n_years - 1)


def taper_weight(t):
    """Compactly supported taper correlation function on [0, 1].

    phi(t) = (1 - t) sin(2 pi t) / (2 pi t) + (1 - cos(2 pi t)) / (2 pi^2 t)
    for 0 <= t <= 1, continuously extended to phi(0) = 1 and identically
    zero for t >= 1. Accepts scalars or arrays of normalized distances.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DataError("taper argument must be non-negative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.zeros_like(t)
    inside = (t > 0) & (t < 1)
    ti = t[inside]
    two_pi_t = 2.0 * np.pi * ti
    out[inside] = ((1.0 - ti) * np.sin(two_pi_t) / two_pi_t
                   + (1.0 - np.cos(two_pi_t)) / (2.0 * np.pi ** 2 * ti))
    out[t == 0] = 1.0
    return float(out[0]) if scalar else out


def taper(cov: np.ndarray, distances: np.ndarray, taper_range_km: float) -> np.ndarray:
    """Entrywise product of a covariance with the taper correlation.

    Distances at or beyond the range are zeroed exactly; the diagonal is
    unchanged. The Schur product with a valid correlation matrix preserves
    positive semi-definiteness.
    """
    if taper_range_km <= 0:
        raise DataError("taper range must be > 0")
    cov = np.asarray(cov, dtype=float)
    distances = np.asarray(distances, dtype=float)
    if cov.shape != distances.shape or cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DataError("cov and distances must be equal square matrices")
    return cov * taper_weight(distances / taper_range_km)


def pca_truncate(matrix: np.ndarray, retained_fraction: float):
    """Leading eigenpairs covering the requested variance fraction.

    Returns (eigvecs, eigvals) with eigvals decreasing and each eigenvector
    signed so that its largest-magnitude entry is positive. Components with
    eigenvalue below EIG_DROP_REL times the largest are discarded before the
    retained-fraction rule is applied.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DataError("input must be a square matrix")
    if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-10 * max(1.0, np.abs(matrix).max())):
        raise DataError("input matrix is not symmetric")
    if not (0.0 < retained_fraction <= 1.0):
        raise DataError("retained_fraction must be in (0, 1]")

    eigvals, eigvecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    keep = eigvals > EIG_DROP_REL * max(eigvals[0], 0.0)
    eigvals = eigvals[keep]
    eigvecs = eigvecs[:, keep]
    if eigvals.size == 0:
        raise NumericalError("matrix has no positive eigenvalues to retain")

    cum = np.cumsum(eigvals)
    d = int(np.searchsorted(cum, retained_fraction * cum[-1] - 1e-15 * cum[-1]) + 1)
    d = min(d, eigvals.size)
    eigvals = eigvals[:d]
    eigvecs = eigvecs[:, :d]

    # deterministic sign: largest-magnitude entry of each column positive
    anchor = np.argmax(np.abs(eigvecs), axis=0)
    signs = np.sign(eigvecs[anchor, np.arange(d)])
    signs[signs == 0] = 1.0
    return eigvecs * signs, eigvals


def variance_deficiency(eigvecs: np.ndarray, eigvals: np.ndarray,
                        reference_diag: np.ndarray) -> np.ndarray:
    """Per-cell variance lost to eigenvalue truncation.

    reference_diag is the diagonal of the matrix that was truncated (equal
    to the sample covariance diagonal, since tapering leaves it unchanged).
    The result is non-negative; tiny negative roundoff is clipped to zero.
    """
    truncated_diag = np.einsum("sd,d,sd->s", eigvecs, eigvals, eigvecs)
    return np.maximum(np.asarray(reference_diag, dtype=float) - truncated_diag, 0.0)


def _check_fit_inputs(panel, marginal_sigmas, distances):
    sig = np.asarray(marginal_sigmas, dtype=float)
    if sig.shape != (panel.n_cells,):
        raise DataError("marginal_sigmas must have length S")
    if np.any(sig <= 0):
        raise DataError("marginal sigmas must be strictly positive")
    distances = np.asarray(distances, dtype=float)
    if distances.shape != (panel.n_cells, panel.n_cells):
        raise DataError("distances must be S x S")
    return sig, distances


def correct_multiplicative(panel: ResidualPanel, marginal_sigmas, distances,
                           config: CovConfig) -> TaperedPcaModel:
    """Fit the tapered-PCA model with multiplicative marginal correction.

    The PCA runs on the tapered *correlation* matrix; the stored scaling
    xi_s = sigma_s / sqrt(trunc_ss) makes the implied covariance diagonal
    equal the marginal variances exactly. Cells whose sample variance is
    numerically zero are excluded from the correlation estimate (treated as
    uncorrelated with everything) and reported on the model.
    """
    sig, distances = _check_fit_inputs(panel, marginal_sigmas, distances)
    cov = sample_cov(panel)
    diag = np.diag(cov).copy()

    dead = np.flatnonzero(diag < VAR_EPS)
    if dead.size:
        warnings.warn(
            f"{dead.size} cell(s) with zero sample variance excluded from "
            f"the correlation estimate: {dead.tolist()}")
        diag[dead] = 1.0
    scale = 1.0 / np.sqrt(diag)
    corr = scale[:, None] * cov * scale[None, :]
    if dead.size:
        corr[dead, :] = 0.0
        corr[:, dead] = 0.0
        corr[dead, dead] = 1.0

    tapered = taper(corr, distances, config.taper_range_km)
    eigvecs, eigvals = pca_truncate(tapered, config.retained_fraction)

    trunc_diag = np.einsum("sd,d,sd->s", eigvecs, eigvals, eigvecs)
    holes = np.flatnonzero(trunc_diag <= 0)
    if holes.size:
        raise NumericalError(
            "truncated correlation has zero diagonal at cell(s) "
            f"{holes.tolist()}; raise retained_fraction")
    xi = sig / np.sqrt(trunc_diag)

    return TaperedPcaModel(
        month=panel.month, eigvecs=eigvecs, eigvals=eigvals,
        correction=MULTIPLICATIVE, correction_values=xi,
        taper_range_km=config.taper_range_km,
        retained_fraction=config.retained_fraction,
        zero_variance_cells=dead)


def correct_additive(panel: ResidualPanel, marginal_sigmas, distances,
                     config: CovConfig) -> TaperedPcaModel:
    """Fit the tapered-PCA model with additive marginal correction.

    The PCA runs on the tapered covariance matrix itself and a non-negative
    nugget eta_s = max(sigma_s^2 - trunc_ss, 0) is added to the diagonal.
    Off-diagonal entries of the truncation are left untouched; where the
    truncated variance already exceeds the marginal estimate the nugget is
    clipped to zero and the diagonal stays above sigma_s^2.
    """
    sig, distances = _check_fit_inputs(panel, marginal_sigmas, distances)
    cov = sample_cov(panel)
    tapered = taper(cov, distances, config.taper_range_km)
    eigvecs, eigvals = pca_truncate(tapered, config.retained_fraction)
    trunc_diag = np.einsum("sd,d,sd->s", eigvecs, eigvals, eigvecs)
    eta = np.maximum(sig ** 2 - trunc_diag, 0.0)
    return TaperedPcaModel(
        month=panel.month, eigvecs=eigvecs, eigvals=eigvals,
        correction=ADDITIVE, correction_values=eta,
        taper_range_km=config.taper_range_km,
        retained_fraction=config.retained_fraction)
