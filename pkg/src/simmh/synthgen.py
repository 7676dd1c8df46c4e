"""Synthetic data with planted signal.

Each generator splits its seed into independent child streams (design,
truth, response) so that changing, say, the noise variance leaves the
design matrix and the planted set untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from . import numcore
from .conjlinear import InclusionVector, LinearProblem

__all__ = [
    "LinearSynthConfig",
    "DMSynthConfig",
    "LinearTruth",
    "DMTruth",
    "toeplitz_design",
    "gen_linear",
    "gen_dm",
]


@dataclass(frozen=True)
class LinearSynthConfig:
    n: int = 200
    P: int = 500
    n_active: int = 5
    rho: float = 0.9
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.P < 1:
            raise ValueError("need n >= 2 and P >= 1")
        if not 0 <= self.n_active <= self.P:
            raise ValueError("n_active must lie in [0, P]")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be below 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class DMSynthConfig:
    """Planted Dirichlet-Multinomial design.

    ``associations`` holds ``(p, j, coefficient)`` triples. Row totals are
    ``depth_base + Poisson(depth_mean)``.
    """

    n: int = 100
    P: int = 30
    J: int = 5
    associations: tuple = ((0, 0, 1.5), (1, 1, -1.5), (2, 2, 1.5))
    beta0: tuple | None = None
    depth_base: int = 1000
    depth_mean: float = 500.0
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.P < 1 or self.J < 2:
            raise ValueError("need n >= 1, P >= 1 and J >= 2")
        for p, j, _ in self.associations:
            if not (0 <= p < self.P and 0 <= j < self.J):
                raise ValueError(f"association ({p}, {j}) out of range")
        if self.beta0 is not None and len(self.beta0) != self.J:
            raise ValueError("beta0 must have J entries")
        if self.depth_base < 0 or self.depth_mean < 0:
            raise ValueError("depth parameters must be nonnegative")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be below 1")


@dataclass
class LinearTruth:
    xi: InclusionVector
    intercept: float
    beta: np.ndarray  # length P, zero off the active set


@dataclass
class DMTruth:
    xi: np.ndarray  # (P, J) 0/1
    beta0: np.ndarray
    beta: np.ndarray  # (P, J)
    gamma: np.ndarray = field(repr=False, default=None)


def toeplitz_design(n: int, P: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows from N(0, rho^|i-j|), columns standardised (mean 0, sample sd 1)."""
    L = np.linalg.cholesky(toeplitz(rho ** np.arange(P)))
    X = rng.standard_normal((n, P)) @ L.T
    X -= X.mean(axis=0)
    X /= X.std(axis=0, ddof=1)
    # a second centring pass removes the rounding left by the division
    X -= X.mean(axis=0)
    return X


def gen_linear(config: LinearSynthConfig):
    """Return ``(problem, truth)`` for the Toeplitz linear design."""
    s_design, s_truth, s_resp = np.random.SeedSequence(config.seed).spawn(3)
    X = toeplitz_design(config.n, config.P, config.rho, numcore.make_rng(s_design))
    rt = numcore.make_rng(s_truth)
    active = np.sort(rt.choice(config.P, size=config.n_active, replace=False))
    coefs = rt.standard_normal(config.n_active + 1)
    beta = np.zeros(config.P)
    beta[active] = coefs[1:]
    mean = coefs[0] + X[:, active] @ coefs[1:]
    y = mean + math.sqrt(config.sigma2) * numcore.make_rng(s_resp).standard_normal(config.n)
    truth = LinearTruth(InclusionVector.from_indices(config.P, active), float(coefs[0]), beta)
    return LinearProblem(X, y), truth


def gen_dm(config: DMSynthConfig):
    """Return ``(DMData, truth)`` for the planted count design."""
    from .dirmult import DMData

    s_design, s_depth, s_counts = np.random.SeedSequence(config.seed).spawn(3)
    X = toeplitz_design(config.n, config.P, config.rho, numcore.make_rng(s_design))
    beta0 = (np.full(config.J, math.log(10.0)) if config.beta0 is None
             else np.asarray(config.beta0, dtype=float))
    beta = np.zeros((config.P, config.J))
    for p, j, c in config.associations:
        beta[p, j] = c
    gamma = np.exp(beta0 + X @ beta)
    depth = config.depth_base + numcore.make_rng(s_depth).poisson(config.depth_mean, config.n)
    rc = numcore.make_rng(s_counts)
    Y = np.empty((config.n, config.J), dtype=np.int64)
    for i in range(config.n):
        g = rc.standard_gamma(gamma[i])
        phi = g / g.sum()
        Y[i] = rc.multinomial(int(depth[i]), phi)
    truth = DMTruth((beta != 0).astype(np.uint8), beta0, beta, gamma)
    return DMData(Y, X), truth
