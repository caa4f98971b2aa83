"""Small dense SPD linear algebra, Gaussian log-densities and closed-form
distances (2-Wasserstein, Bures, Hellinger) between Gaussian measures."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ArgumentError, NumericError

LOG_2PI = float(np.log(2.0 * np.pi))

# Eigenvalues >= -EIG_CLAMP_RTOL * lambda_max are round-off and clamped to 0.
EIG_CLAMP_RTOL = 1e-9
W2_CLAMP_ATOL = 1e-9


def spd(a, name="matrix"):
    """Return ``a`` as a symmetrized, validated SPD float array.

    Raises
    ------
    ArgumentError
        If ``a`` is not square or not positive definite.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ArgumentError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError(f"{name} has non-finite entries")
    a = 0.5 * (a + a.T)
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ArgumentError(f"{name} is not positive definite") from None
    return a


def _sym_eigh(a):
    try:
        return np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}", payload=a) from None


def _clamp_eigs(w, a):
    lam_max = max(float(np.max(w)), 0.0)
    if np.any(w < -EIG_CLAMP_RTOL * max(lam_max, np.finfo(float).tiny)):
        raise NumericError("matrix is indefinite beyond round-off", payload=a)
    return np.clip(w, 0.0, None)


def spd_sqrt(a):
    """Symmetric square root of an SPD matrix via eigendecomposition."""
    a = np.asarray(a, dtype=float)
    w, v = _sym_eigh(0.5 * (a + a.T))
    w = _clamp_eigs(w, a)
    b = (v * np.sqrt(w)) @ v.T
    return 0.5 * (b + b.T)


def _trace_sqrt(m):
    """Trace of the square root of a symmetric PSD matrix."""
    m = 0.5 * (m + m.T)
    try:
        w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}", payload=m) from None
    return float(np.sum(np.sqrt(_clamp_eigs(w, m))))


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """A Gaussian N(mean, cov) with cached Cholesky factor and log-determinant.

    Instances are immutable; build them with ``GaussianComponent(mean, cov)``.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    log_det: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        if mean.ndim != 1:
            raise ArgumentError(f"mean must be a vector, got shape {mean.shape}")
        cov = spd(self.cov, "cov").copy()
        if cov.shape[0] != mean.shape[0]:
            raise ArgumentError(
                f"mean has length {mean.shape[0]} but cov is {cov.shape[0]}x{cov.shape[0]}"
            )
        chol = np.linalg.cholesky(cov)
        for arr in (mean, cov, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "log_det", float(2.0 * np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self):
        return self.mean.shape[0]

    @cached_property
    def cov_sqrt(self):
        return spd_sqrt(self.cov)

    def __repr__(self):
        return f"GaussianComponent(mean={self.mean.tolist()}, cov={self.cov.tolist()})"


def _check_same_dim(a, b):
    if a.dim != b.dim:
        raise ArgumentError(f"dimension mismatch: {a.dim} vs {b.dim}")


def log_pdf(c: GaussianComponent, y) -> float:
    """Log-density of ``y`` under ``c``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (c.dim,):
        raise ArgumentError(f"point has shape {y.shape}, expected ({c.dim},)")
    z = _solve_lower(c.chol, y - c.mean)
    return float(-0.5 * c.dim * LOG_2PI - 0.5 * c.log_det - 0.5 * z @ z)


def _solve_lower(chol, b):
    return solve_triangular(chol, b, lower=True, check_finite=False)


def log_pdf_many(c: GaussianComponent, ys) -> np.ndarray:
    """Vectorized :func:`log_pdf` over the rows of ``ys``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if ys.shape[1] != c.dim:
        raise ArgumentError(f"points have dimension {ys.shape[1]}, expected {c.dim}")
    z = _solve_lower(c.chol, (ys - c.mean).T)
    return -0.5 * c.dim * LOG_2PI - 0.5 * c.log_det - 0.5 * np.sum(z * z, axis=0)


def _bures_from_sqrt(a, a_sqrt, b):
    inner = a_sqrt @ b @ a_sqrt
    return float(np.trace(a) + np.trace(b) - 2.0 * _trace_sqrt(inner))


def _clamp_w2(v, scale):
    if v < 0.0:
        if v > -W2_CLAMP_ATOL * max(1.0, scale):
            return 0.0
        raise NumericError(f"negative squared distance {v!r} beyond round-off")
    return v


def bures_squared(a, b) -> float:
    """Squared Bures-Wasserstein distance between SPD matrices ``a`` and ``b``."""
    a = spd(a, "a")
    b = spd(b, "b")
    if a.shape != b.shape:
        raise ArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return 0.0
    v = _bures_from_sqrt(a, spd_sqrt(a), b)
    return _clamp_w2(v, float(np.trace(a) + np.trace(b)))


def w2_squared(a: GaussianComponent, b: GaussianComponent) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    ``||m_b - m_a||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``.
    """
    _check_same_dim(a, b)
    # exact identity, so coinciding components are repelled exactly rather than to round-off
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    dm = b.mean - a.mean
    bures = _bures_from_sqrt(a.cov, a.cov_sqrt, b.cov)
    v = float(dm @ dm) + bures
    return _clamp_w2(v, float(np.trace(a.cov) + np.trace(b.cov)))


def hellinger_squared(a: GaussianComponent, b: GaussianComponent) -> float:
    """Squared Hellinger distance between two Gaussians (closed form)."""
    _check_same_dim(a, b)
    avg = 0.5 * (a.cov + b.cov)
    sign, logdet_avg = np.linalg.slogdet(avg)
    if sign <= 0:
        raise NumericError("averaged covariance is not positive definite", payload=avg)
    dm = a.mean - b.mean
    quad = float(dm @ np.linalg.solve(avg, dm))
    log_bc = 0.25 * a.log_det + 0.25 * b.log_det - 0.5 * logdet_avg - quad / 8.0
    return float(min(1.0, max(0.0, -np.expm1(log_bc))))
