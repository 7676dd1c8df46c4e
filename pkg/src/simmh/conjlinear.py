"""Conjugate Normal-Inverse-Gamma linear model over inclusion vectors.

Every candidate design is the intercept column plus the active
predictors, so "the null model" always means the intercept-only fit.
Per-configuration quantities (RSS, log marginal likelihood and the two
test-based dissimilarities) are memoised on the problem instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import special

from . import numcore

__all__ = [
    "P_VALUE_FLOOR",
    "InclusionVector",
    "NIGPrior",
    "ModelPrior",
    "LinearProblem",
    "EvaluationError",
    "DegreesOfFreedomError",
    "log_model_prior",
    "f_dissimilarity",
    "lr_dissimilarity",
    "get_dissimilarity",
    "DissimilarityFn",
]

# p-values are floored here before log10, so -d never exceeds 300
P_VALUE_FLOOR = 1e-300
_LOG10_FLOOR = math.log10(P_VALUE_FLOOR)


class EvaluationError(ArithmeticError):
    """A model quantity could not be evaluated (e.g. b_n <= 0)."""


class DegreesOfFreedomError(EvaluationError):
    """Too many active predictors for the residual degrees of freedom."""


class InclusionVector:
    """Immutable binary inclusion vector with cached popcount and hash key."""

    __slots__ = ("bits", "popcount", "key")

    def __init__(self, bits):
        b = np.asarray(bits)
        if b.ndim != 1:
            raise ValueError("inclusion vector must be one-dimensional")
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ValueError("inclusion vector entries must be 0 or 1")
        b = b.astype(np.uint8)
        b.setflags(write=False)
        self.bits = b
        self.popcount = int(b.sum())
        self.key = b.tobytes()

    @classmethod
    def _trusted(cls, bits: np.ndarray, popcount: int) -> "InclusionVector":
        obj = cls.__new__(cls)
        bits.setflags(write=False)
        obj.bits = bits
        obj.popcount = popcount
        obj.key = bits.tobytes()
        return obj

    @classmethod
    def zeros(cls, P: int) -> "InclusionVector":
        return cls._trusted(np.zeros(P, dtype=np.uint8), 0)

    @classmethod
    def from_indices(cls, P: int, idx: Iterable[int]) -> "InclusionVector":
        b = np.zeros(P, dtype=np.uint8)
        b[list(idx)] = 1
        return cls._trusted(b, int(b.sum()))

    @classmethod
    def from_key(cls, key: bytes) -> "InclusionVector":
        b = np.frombuffer(key, dtype=np.uint8).copy()
        return cls._trusted(b, int(b.sum()))

    def __len__(self):
        return self.bits.shape[0]

    def __eq__(self, other):
        return isinstance(other, InclusionVector) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"InclusionVector({''.join(map(str, self.bits.tolist()))})"

    def __getitem__(self, i):
        return int(self.bits[i])

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def flip(self, i: int) -> "InclusionVector":
        b = self.bits.copy()
        b[i] ^= 1
        return InclusionVector._trusted(b, self.popcount + (1 if b[i] else -1))

    def swap(self, p: int, q: int) -> "InclusionVector":
        """Deactivate ``p`` and activate ``q``."""
        if not (self.bits[p] == 1 and self.bits[q] == 0):
            raise ValueError(f"swap({p}, {q}) requires p active and q inactive")
        b = self.bits.copy()
        b[p] = 0
        b[q] = 1
        return InclusionVector._trusted(b, self.popcount)


@dataclass(frozen=True)
class NIGPrior:
    """Normal-Inverse-Gamma prior over (intercept, coefficients) and sigma^2.

    Index 0 of ``mu0``/``lambda0`` belongs to the intercept.
    """

    mu0: np.ndarray
    lambda0: np.ndarray
    a0: float
    b0: float

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        lam = np.asarray(self.lambda0, dtype=float)
        if lam.shape != (mu0.size, mu0.size):
            raise ValueError("lambda0 must be (P+1) x (P+1)")
        if not np.array_equal(lam, lam.T):
            raise ValueError("lambda0 must be symmetric")
        if not (self.a0 > 0 and self.b0 > 0):
            raise ValueError("a0 and b0 must be positive")
        numcore.cholesky(lam)  # positive definite or FactorizationError
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "lambda0", lam)

    @classmethod
    def default(cls, P: int, precision: float = 0.01, a0: float = 0.01, b0: float = 0.01):
        return cls(np.zeros(P + 1), precision * np.eye(P + 1), a0, b0)


@dataclass(frozen=True)
class ModelPrior:
    """Beta(a_pi, b_pi) hyperprior on the common inclusion probability."""

    a_pi: float = 1.0
    b_pi: float = 1.0

    def __post_init__(self):
        if not (self.a_pi > 0 and self.b_pi > 0):
            raise ValueError("a_pi and b_pi must be positive")


def log_model_prior(model_prior: ModelPrior, xi: InclusionVector) -> float:
    """Beta-Binomial log prior of a configuration with the inclusion rate integrated out."""
    k = xi.popcount
    P = len(xi)
    a, b = model_prior.a_pi, model_prior.b_pi
    return float(special.betaln(k + a, P - k + b) - special.betaln(a, b))


class LinearProblem:
    """Data, priors and a per-configuration statistics cache.

    Parameters
    ----------
    X : (n, P) array
        Design without the intercept column (normally standardised).
    y : (n,) array
    prior : NIGPrior, optional
        Defaults to ``NIGPrior.default(P)``.
    model_prior : ModelPrior, optional
    cache : bool
        Memoise per-configuration statistics.
    """

    def __init__(self, X, y, prior: NIGPrior | None = None,
                 model_prior: ModelPrior | None = None, cache: bool = True):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
        self.X = X
        self.y = y
        self.n, self.P = X.shape
        self.prior = prior if prior is not None else NIGPrior.default(self.P)
        if self.prior.mu0.shape != (self.P + 1,):
            raise ValueError("prior dimension must be P + 1")
        self.model_prior = model_prior if model_prior is not None else ModelPrior()
        self.caching = cache
        self.stat_cache: dict[bytes, dict[str, float]] = {}

        Z = np.column_stack([np.ones(self.n), X])
        self._Z = Z
        self._ZtZ = Z.T @ Z
        self._Zty = Z.T @ y
        self._yty = float(y @ y)
        xc = X - X.mean(axis=0)
        yc = y - y.mean()
        self._Xc = xc
        self._yc = yc
        self._G = xc.T @ xc
        self._b = xc.T @ yc
        self.rss0 = float(yc @ yc)
        self._a_n = self.prior.a0 + 0.5 * self.n
        self._lml_const = (
            -0.5 * self.n * numcore.LOG_2PI
            + special.gammaln(self._a_n) - special.gammaln(self.prior.a0)
            + self.prior.a0 * math.log(self.prior.b0)
        )

    # -- cache plumbing ---------------------------------------------------

    def _get(self, xi: InclusionVector, name: str, compute: Callable[[], float]) -> float:
        if not self.caching:
            return compute()
        entry = self.stat_cache.get(xi.key)
        if entry is None:
            entry = self.stat_cache.setdefault(xi.key, {})
        val = entry.get(name)
        if val is None:
            val = compute()
            entry[name] = val
        return val

    def _check(self, xi: InclusionVector):
        if len(xi) != self.P:
            raise ValueError(f"inclusion vector has length {len(xi)}, expected {self.P}")

    # -- statistics -------------------------------------------------------

    def rss(self, xi: InclusionVector) -> float:
        """Residual sum of squares of the intercept + active-set fit."""
        self._check(xi)
        return self._get(xi, "rss", lambda: self._rss(xi))

    def _rss(self, xi: InclusionVector) -> float:
        S = xi.active()
        if S.size == 0:
            return self.rss0
        G = self._G[np.ix_(S, S)]
        b = self._b[S]
        try:
            L = numcore.cholesky(G)
            z = numcore._forward_sub(L, b)
            rss = self.rss0 - float(z @ z)
        except (numcore.FactorizationError, numcore.DomainError):
            rss = -1.0
        # near-interpolating or collinear fits: redo on the data directly
        if rss <= 1e-10 * self.rss0:
            rss = numcore.least_squares(self._Xc[:, S], self._yc).rss
        return rss

    def log_marginal_likelihood(self, xi: InclusionVector) -> float:
        """Closed-form ``log p(y | xi)`` under the NIG prior."""
        self._check(xi)
        return self._get(xi, "lml", lambda: self._lml(xi))

    def _lml(self, xi: InclusionVector) -> float:
        idx = np.concatenate(([0], xi.active() + 1))
        lam0 = self.prior.lambda0[np.ix_(idx, idx)]
        mu0 = self.prior.mu0[idx]
        lam_n = self._ZtZ[np.ix_(idx, idx)] + lam0
        r = self._Zty[idx] + lam0 @ mu0
        L0 = numcore.cholesky(lam0)
        try:
            Ln = numcore.cholesky(lam_n)
        except numcore.FactorizationError as exc:
            raise EvaluationError(f"Lambda_n not positive definite for {xi!r}") from exc
        z = numcore._forward_sub(Ln, r)
        b_n = self.prior.b0 + 0.5 * (self._yty + float(mu0 @ lam0 @ mu0) - float(z @ z))
        if not b_n > 0:
            raise EvaluationError(f"b_n = {b_n!r} <= 0 for {xi!r}")
        logdet0 = 2.0 * np.log(np.diag(L0)).sum()
        logdetn = 2.0 * np.log(np.diag(Ln)).sum()
        return float(self._lml_const + 0.5 * (logdet0 - logdetn) - self._a_n * math.log(b_n))

    def log_model_prior(self, xi: InclusionVector) -> float:
        return log_model_prior(self.model_prior, xi)

    def log_posterior(self, xi: InclusionVector) -> float:
        """Unnormalised log posterior mass of a configuration."""
        return self.log_marginal_likelihood(xi) + self.log_model_prior(xi)

    def dissimilarity(self, xi: InclusionVector, kind: str) -> float:
        return get_dissimilarity(kind)(self, xi)

    def enumerate_posterior(self) -> tuple[list[InclusionVector], np.ndarray]:
        """Exact posterior over all 2^P configurations (small P only)."""
        if self.P > 16:
            raise ValueError("enumeration limited to P <= 16")
        states = [InclusionVector([(m >> p) & 1 for p in range(self.P)])
                  for m in range(2 ** self.P)]
        lp = np.array([self.log_posterior(s) for s in states])
        w = np.exp(lp - special.logsumexp(lp))
        return states, w / w.sum()


DissimilarityFn = Callable[[LinearProblem, InclusionVector], float]


def _dof_check(problem: LinearProblem, k: int) -> int:
    dof = problem.n - k - 1
    if dof < 1:
        raise DegreesOfFreedomError(f"n={problem.n} too small for {k} active predictors")
    return dof


def _log10_p(p: float) -> float:
    return _LOG10_FLOOR if p <= P_VALUE_FLOOR else math.log10(p)


def f_dissimilarity(problem: LinearProblem, xi: InclusionVector) -> float:
    """log10 p-value of the F-test of the active set against the intercept-only model."""

    def compute():
        k = xi.popcount
        if k == 0:
            return 0.0
        dof = _dof_check(problem, k)
        rss = problem.rss(xi)
        if rss <= 0.0:
            return _LOG10_FLOOR
        F = max(problem.rss0 - rss, 0.0) / k / (rss / dof)
        return _log10_p(numcore.f_sf(F, k, dof))

    problem._check(xi)
    return problem._get(xi, "dF", compute)


def lr_dissimilarity(problem: LinearProblem, xi: InclusionVector) -> float:
    """log10 p-value of the Gaussian likelihood-ratio test against the intercept-only model.

    With sigma^2 profiled out the statistic is ``n log(RSS_0 / RSS)``.
    """

    def compute():
        k = xi.popcount
        if k == 0:
            return 0.0
        _dof_check(problem, k)
        rss = problem.rss(xi)
        if rss <= 0.0:
            return _LOG10_FLOOR
        stat = max(problem.n * math.log(problem.rss0 / rss), 0.0)
        return _log10_p(numcore.chi2_sf(stat, k))

    problem._check(xi)
    return problem._get(xi, "dLR", compute)


_DISSIMILARITIES = {"F": f_dissimilarity, "LR": lr_dissimilarity}


def get_dissimilarity(kind) -> DissimilarityFn:
    """Map ``"F"``/``"LR"`` (or a callable) to a dissimilarity function."""
    if callable(kind):
        return kind
    try:
        return _DISSIMILARITIES[str(kind).upper()]
    except KeyError:
        raise ValueError(f"unknown dissimilarity {kind!r}; expected 'F' or 'LR'") from None
