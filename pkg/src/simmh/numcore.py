"""Numerical primitives shared by every sampler.

Special functions, a handful of probability helpers, small dense linear
algebra and seeded random streams.  ``digamma``/``trigamma`` are written
out by hand because the Dirichlet-Multinomial optimiser calls them from
compiled loops; the remaining special functions wrap :mod:`scipy.special`.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numba as nb
import numpy as np
from scipy import special
from scipy.linalg import lapack

__all__ = [
    "DomainError",
    "FactorizationError",
    "LstsqResult",
    "log_gamma",
    "chi2_sf",
    "f_sf",
    "digamma",
    "trigamma",
    "cholesky",
    "least_squares",
    "mvn_sample",
    "mvn_logpdf",
    "make_rng",
    "spawn_seeds",
]

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the domain of a numerical routine."""


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorisation failed; ``pivot`` is the 0-based failing column."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot})")


# --------------------------------------------------------------------------
# special functions
# --------------------------------------------------------------------------


def _check_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} requires finite positive arguments")
    return arr


def log_gamma(x):
    """Natural log of the gamma function for positive ``x`` (scalar or array)."""
    arr = _check_positive(x, "log_gamma")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def chi2_sf(x, k):
    """Upper tail ``Pr(chi2_k > x)``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or np.any(np.isnan(x_arr)):
        raise DomainError("chi2_sf requires x >= 0")
    if np.any(np.asarray(k) < 1):
        raise DomainError("chi2_sf requires k >= 1")
    out = special.gammaincc(np.asarray(k, dtype=float) / 2.0, x_arr / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def f_sf(f, d1, d2):
    """Upper tail ``Pr(F_{d1,d2} > f)``."""
    f_arr = np.asarray(f, dtype=float)
    if np.any(f_arr < 0) or np.any(np.isnan(f_arr)):
        raise DomainError("f_sf requires f >= 0")
    if np.any(np.asarray(d1) < 1) or np.any(np.asarray(d2) < 1):
        raise DomainError("f_sf requires positive degrees of freedom")
    out = special.fdtrc(np.asarray(d1, dtype=float), np.asarray(d2, dtype=float), f_arr)
    return float(out) if np.ndim(out) == 0 else out


# digamma / trigamma: upward recurrence to x >= 10, then the asymptotic
# Bernoulli series (truncation error below 1e-16 there).


@nb.njit(cache=True, nogil=True)
def _digamma_scalar(x):
    r = 0.0
    while x < 10.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (
        -1.0 / 132 + f * (691.0 / 32760 + f * (-1.0 / 12)))))))
    return r + math.log(x) - 0.5 / x + t


@nb.njit(cache=True, nogil=True)
def _trigamma_scalar(x):
    r = 0.0
    while x < 10.0:
        r += 1.0 / (x * x)
        x += 1.0
    f = 1.0 / (x * x)
    t = 1.0 / x + 0.5 * f + (1.0 / 6 + f * (-1.0 / 30 + f * (1.0 / 42 + f * (
        -1.0 / 30 + f * (5.0 / 66 + f * (-691.0 / 2730 + f * (7.0 / 6))))))) * f / x
    return r + t


@nb.njit(cache=True, nogil=True)
def _psi_pair(x):
    """Return (digamma(x), trigamma(x)) sharing one recurrence."""
    d = 0.0
    tg = 0.0
    while x < 10.0:
        inv = 1.0 / x
        d -= inv
        tg += inv * inv
        x += 1.0
    f = 1.0 / (x * x)
    d += math.log(x) - 0.5 / x + f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (
        1.0 / 240 + f * (-1.0 / 132 + f * (691.0 / 32760 + f * (-1.0 / 12)))))))
    tg += 1.0 / x + 0.5 * f + (1.0 / 6 + f * (-1.0 / 30 + f * (1.0 / 42 + f * (
        -1.0 / 30 + f * (5.0 / 66 + f * (-691.0 / 2730 + f * (7.0 / 6))))))) * f / x
    return d, tg


@nb.njit(cache=True, nogil=True)
def _lgamma_psi(x):
    """Return (lgamma(x), digamma(x), trigamma(x)) for x > 0 with one logarithm.

    Shifts to x >= 8 and uses the Stirling and Bernoulli series there;
    absolute error is below 1e-13 for all three.
    """
    prod = 1.0
    d = 0.0
    tg = 0.0
    while x < 8.0:
        inv = 1.0 / x
        prod *= x
        d -= inv
        tg += inv * inv
        x += 1.0
    lx = math.log(x)
    inv = 1.0 / x
    f = inv * inv
    lg = ((x - 0.5) * lx - x + 0.9189385332046728
          + inv * (1.0 / 12 + f * (-1.0 / 360 + f * (1.0 / 1260 + f * (
              -1.0 / 1680 + f * (1.0 / 1188 + f * (-691.0 / 360360)))))))
    if prod != 1.0:
        lg -= math.log(prod)
    d += lx - 0.5 * inv + f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (
        1.0 / 240 + f * (-1.0 / 132 + f * (691.0 / 32760 + f * (-1.0 / 12)))))))
    tg += inv + 0.5 * f + (1.0 / 6 + f * (-1.0 / 30 + f * (1.0 / 42 + f * (
        -1.0 / 30 + f * (5.0 / 66 + f * (-691.0 / 2730 + f * (7.0 / 6))))))) * f * inv
    return lg, d, tg


@nb.vectorize(["f8(f8)"], cache=True)
def _digamma_ufunc(x):
    return _digamma_scalar(x)


@nb.vectorize(["f8(f8)"], cache=True)
def _trigamma_ufunc(x):
    return _trigamma_scalar(x)


def digamma(x):
    """Derivative of ``log_gamma``."""
    arr = _check_positive(x, "digamma")
    out = _digamma_ufunc(arr)
    return float(out) if np.ndim(out) == 0 else out


def trigamma(x):
    """Second derivative of ``log_gamma``."""
    arr = _check_positive(x, "trigamma")
    out = _trigamma_ufunc(arr)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises
    ------
    FactorizationError
        If ``m`` is not numerically positive definite. The ``pivot``
        attribute holds the 0-based index of the failing leading minor.
    """
    a = np.array(m, dtype=float, ndmin=2)
    if a.shape[0] != a.shape[1]:
        raise DomainError("cholesky requires a square matrix")
    if a.shape[0] == 0:
        return a
    if not np.all(np.isfinite(a)):
        raise FactorizationError(0, "matrix has non-finite entries")
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(info - 1)
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise DomainError(f"dpotrf argument {-info} invalid")
    return c


def cho_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    x, info = lapack.dpotrs(chol, b, lower=1)
    if info != 0:  # pragma: no cover
        raise DomainError(f"dpotrs failed with info={info}")
    return x


class LstsqResult(NamedTuple):
    coef: np.ndarray
    rss: float
    rank: int
    rank_deficient: bool


def least_squares(X, y) -> LstsqResult:
    """Minimum-norm least-squares fit of ``y`` on the columns of ``X``.

    ``X`` may have zero columns, in which case the fit is empty and
    ``rss = y.y``.  Rank deficiency is tolerated and reported.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DomainError("least_squares: X must be n x k with n = len(y)")
    n, k = X.shape
    if k == 0:
        return LstsqResult(np.zeros(0), float(y @ y), 0, False)
    if n < k:
        raise DomainError("least_squares requires n >= k")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return LstsqResult(coef, float(resid @ resid), int(rank), bool(rank < k))


def mvn_logpdf(x, mean, chol_cov) -> float:
    """Gaussian log-density with covariance ``chol_cov @ chol_cov.T``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.atleast_2d(np.asarray(chol_cov, dtype=float))
    k = x.shape[0]
    if mean.shape != (k,) or L.shape != (k, k):
        raise DomainError("mvn_logpdf dimension mismatch")
    if k == 0:
        return 0.0
    z = _forward_sub(L, x - mean)
    return float(-0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * k * LOG_2PI)


def mvn_sample(mean, chol_cov, rng: np.random.Generator) -> np.ndarray:
    """Draw ``mean + chol_cov @ z`` with ``z`` standard normal."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.atleast_2d(np.asarray(chol_cov, dtype=float))
    k = mean.shape[0]
    if L.shape != (k, k):
        raise DomainError("mvn_sample dimension mismatch")
    if k == 0:
        return np.zeros(0)
    return mean + L @ rng.standard_normal(k)


def _forward_sub(L, b):
    out, info = lapack.dtrtrs(L, b, lower=1)
    if info != 0:
        raise DomainError("singular triangular factor")
    return out


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; accepts an int or a :class:`numpy.random.SeedSequence`."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child seed sequences for ``n`` parallel streams."""
    return np.random.SeedSequence(int(seed)).spawn(n)
