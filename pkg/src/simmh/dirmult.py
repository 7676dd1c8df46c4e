"""Dirichlet-Multinomial regression: likelihood, link, incremental updates and PMLE.

Concentrations follow the log-linear link ``gamma_ij = exp(beta0_j + x_i' beta_j)``
with the linear predictor clipped to [-30, 30]. For one category ``j`` the
log-likelihood, as a function of ``beta_j`` with everything else held fixed,
splits into a constant plus

    f_j = sum_i lgamma(R_i + g_i) - lgamma(y_i+ + R_i + g_i)
                + lgamma(y_ij + g_i) - lgamma(g_i)

where ``g_i = gamma_ij`` and ``R_i`` is the sum of the other concentrations.
With ``A_i = df/dg`` and ``B_i = d2f/dg2`` (digamma and trigamma
differences) the derivatives in ``eta = log g`` are ``g A`` and
``g A + g^2 B``, which give the analytic gradient and Hessian used by the
Newton solver below.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import optimize
from scipy.special import digamma, gammaln, logsumexp, polygamma

from . import numcore
from .conjlinear import P_VALUE_FLOOR
from .numcore import _lgamma_psi

__all__ = [
    "ETA_CLIP",
    "DMData",
    "DMParams",
    "DMPriors",
    "PMLEResult",
    "PMLEError",
    "WarmStartMemory",
    "CandidateSet",
    "dm_logpmf",
    "dm_total_loglik",
    "dm_baseline_loglik",
    "dm_incremental_loglik",
    "dm_link_column",
    "link",
    "moment_intercepts",
    "beta0_hessian",
    "flip_sets",
    "dm_category_objective",
    "dm_grad_hess",
    "dm_pmle",
    "evaluate_candidates",
    "lr_log10_pvalue",
    "dm_category_proposal_probs",
]

log = logging.getLogger(__name__)

ETA_CLIP = 30.0


class PMLEError(ArithmeticError):
    """The penalised fit did not converge; carries the best iterate."""

    def __init__(self, message, beta=None, grad_norm=float("nan")):
        super().__init__(message)
        self.beta = beta
        self.grad_norm = grad_norm


# --------------------------------------------------------------------------
# data containers
# --------------------------------------------------------------------------


class DMData:
    """Counts ``Y`` (n x J) and standardised covariates ``X`` (n x P)."""

    def __init__(self, Y, X):
        Y = np.asarray(Y)
        X = np.asarray(X, dtype=float)
        if Y.ndim != 2 or X.ndim != 2 or Y.shape[0] != X.shape[0]:
            raise ValueError(f"dimension mismatch: Y {Y.shape}, X {X.shape}")
        Yf = Y.astype(float)
        if not np.all(np.isfinite(Yf)) or np.any(Yf < 0) or np.any(Yf != np.round(Yf)):
            raise ValueError("counts must be nonnegative integers")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        self.Y = Yf.astype(np.int64)
        self.Yf = np.ascontiguousarray(Yf)
        self.X = np.ascontiguousarray(X)
        self.n, self.J = self.Y.shape
        self.P = X.shape[1]
        self.row_totals = self.Yf.sum(axis=1)
        # y-only part of the log-likelihood, shared by every parameter value
        self.const = float(gammaln(self.row_totals + 1.0).sum() - gammaln(self.Yf + 1.0).sum())


@dataclass(frozen=True)
class DMPriors:
    """Prior variances, Beta hyperparameters of the inclusion indicators, ridge constant."""

    s2: np.ndarray
    r2: np.ndarray
    a: float = 1.0
    b: float = 9.0
    c: float = 1.0

    def __post_init__(self):
        s2 = np.atleast_1d(np.asarray(self.s2, dtype=float))
        r2 = np.atleast_1d(np.asarray(self.r2, dtype=float))
        if np.any(s2 <= 0) or np.any(r2 <= 0) or not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ValueError("all prior hyperparameters must be positive")
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "r2", r2)

    @classmethod
    def default(cls, J: int, s2: float = 10.0, r2: float = 10.0, a: float = 1.0,
                b: float = 9.0, c: float = 1.0) -> "DMPriors":
        return cls(np.full(J, s2), np.full(J, r2), a, b, c)

    @property
    def inclusion_prob(self) -> float:
        return self.a / (self.a + self.b)


def dm_link_column(X: np.ndarray, beta0_j: float, active, beta_active):
    """Linear predictor and concentration column for one category.

    Returns ``(eta, gamma)``; ``gamma`` uses the clipped predictor.
    """
    active = np.asarray(active, dtype=np.int64)
    eta = beta0_j + (X[:, active] @ np.asarray(beta_active, dtype=float) if active.size
                     else np.zeros(X.shape[0]))
    return eta, link(eta)


def link(eta: np.ndarray) -> np.ndarray:
    """``exp`` of the linear predictor clipped to [-ETA_CLIP, ETA_CLIP]."""
    eta = np.asarray(eta, dtype=float)
    clipped = np.abs(eta) > ETA_CLIP
    if clipped.any():
        log.warning("linear predictor clipped to +/-%g in %d cells", ETA_CLIP, int(clipped.sum()))
        eta = np.clip(eta, -ETA_CLIP, ETA_CLIP)
    return np.exp(eta)


def moment_intercepts(data: DMData) -> np.ndarray:
    """Method-of-moments intercepts (see :meth:`DMParams.initial`)."""
    tot = data.row_totals
    rows = tot > 0
    prop = (data.Yf[rows] / tot[rows, None]).mean(axis=0) if rows.any() else np.full(data.J, 1.0)
    prop = np.maximum(prop, 0.5 / max(tot.sum(), 1.0))
    prop /= prop.sum()
    m = tot[rows].mean() if rows.any() else 0.0
    expect = tot[rows, None] * prop
    dof = max(rows.sum() * (data.J - 1), 1)
    phi = float(np.sum((data.Yf[rows] - expect) ** 2 / expect) / dof) if rows.any() else 1.0
    if m > 1 and 1.0 < phi < m:
        s = (m - phi) / (phi - 1.0)
    else:
        s = 1e4 if phi <= 1.0 else 1e-1
    s = min(max(s, 1e-1), 1e4)
    return np.log(prop * s)


def beta0_hessian(data: DMData, params: "DMParams") -> np.ndarray:
    """Hessian of the log-likelihood in the intercepts at the cached concentrations."""
    g = params.gamma
    gp = params.gamma_row
    yp = data.row_totals
    Y = data.Yf
    A = (digamma(gp) - digamma(yp + gp))[:, None] + digamma(Y + g) - digamma(g)
    B_row = polygamma(1, gp) - polygamma(1, yp + gp)
    B_cell = polygamma(1, Y + g) - polygamma(1, g)
    H = (g * B_row[:, None]).T @ g
    H[np.diag_indices_from(H)] += np.sum(g * A + g * g * B_cell, axis=0)
    return H


class DMParams:
    """Sampler state with cached concentrations and log-likelihood."""

    def __init__(self, data: DMData, beta0, beta=None, xi=None):
        J, P = data.J, data.P
        self.beta0 = np.array(beta0, dtype=float).reshape(J)
        self.xi = (np.zeros((P, J), dtype=np.uint8) if xi is None
                   else np.array(xi, dtype=np.uint8).reshape(P, J))
        self.beta = (np.zeros((P, J)) if beta is None
                     else np.array(beta, dtype=float).reshape(P, J))
        if np.any(self.beta[self.xi == 0] != 0):
            raise ValueError("beta must vanish where xi is 0")
        self.eta = np.empty((data.n, J))
        self.gamma = np.empty((data.n, J))
        for j in range(J):
            S = self.active(j)
            self.eta[:, j], self.gamma[:, j] = dm_link_column(data.X, self.beta0[j], S,
                                                              self.beta[S, j])
        self.gamma_row = self.gamma.sum(axis=1)
        self.loglik = dm_total_loglik(data, self)

    @classmethod
    def initial(cls, data: DMData) -> "DMParams":
        """Moment start with no covariates.

        The intercepts are ``log(p_j * s)`` where ``p_j`` are the mean
        category proportions and ``s`` the total concentration implied by the
        Pearson overdispersion ``phi = (m + s) / (1 + s)`` at the mean depth
        ``m``.
        """
        return cls(data, moment_intercepts(data))

    def active(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.xi[:, j])

    def copy(self) -> "DMParams":
        new = DMParams.__new__(DMParams)
        new.beta0 = self.beta0.copy()
        new.xi = self.xi.copy()
        new.beta = self.beta.copy()
        new.eta = self.eta.copy()
        new.gamma = self.gamma.copy()
        new.gamma_row = self.gamma_row.copy()
        new.loglik = self.loglik
        return new

    def rest(self, j: int) -> np.ndarray:
        """Row sums of the concentrations of all categories except ``j``."""
        others = np.delete(self.gamma, j, axis=1)
        return others.sum(axis=1)

    def set_category(self, j: int, active, beta_active, eta_col, gamma_col,
                     loglik: float) -> None:
        self.xi[:, j] = 0
        self.beta[:, j] = 0.0
        active = np.asarray(active, dtype=np.int64)
        self.xi[active, j] = 1
        self.beta[active, j] = beta_active
        self.eta[:, j] = eta_col
        self.gamma[:, j] = gamma_col
        self.gamma_row = self.gamma.sum(axis=1)
        self.loglik = loglik


# --------------------------------------------------------------------------
# likelihood
# --------------------------------------------------------------------------


def dm_logpmf(counts, gamma) -> float:
    """Log probability of one count vector under DM(gamma)."""
    y = np.asarray(counts, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if y.shape != g.shape:
        raise ValueError("counts and gamma differ in shape")
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise numcore.DomainError("gamma entries must be positive and finite")
    yp, gp = y.sum(), g.sum()
    return float(gammaln(yp + 1.0) + gammaln(gp) - gammaln(yp + gp)
                 + np.sum(gammaln(y + g) - gammaln(y + 1.0) - gammaln(g)))


def _loglik_from_gamma(data: DMData, gamma: np.ndarray) -> float:
    gp = gamma.sum(axis=1)
    return float(data.const + np.sum(gammaln(gp) - gammaln(data.row_totals + gp))
                 + np.sum(gammaln(data.Yf + gamma) - gammaln(gamma)))


def dm_total_loglik(data: DMData, params: DMParams) -> float:
    """Sum of per-row DM log probabilities at the cached concentrations."""
    return _loglik_from_gamma(data, params.gamma)


def dm_baseline_loglik(data: DMData, beta0) -> float:
    """Log-likelihood with no covariates in any category."""
    g0 = np.exp(np.clip(np.asarray(beta0, dtype=float), -ETA_CLIP, ETA_CLIP))
    return _loglik_from_gamma(data, np.broadcast_to(g0, (data.n, data.J)))


def dm_incremental_loglik(data: DMData, params: DMParams, j: int, new_gamma_col):
    """Replace column ``j`` of the concentrations; returns ``(total, delta1, delta2)``.

    ``delta1`` collects the per-cell terms of category ``j``, ``delta2`` the
    row-sum terms.
    """
    new = np.asarray(new_gamma_col, dtype=float)
    if np.any(new <= 0) or not np.all(np.isfinite(new)):
        raise numcore.DomainError("updated concentrations must be positive and finite")
    old = params.gamma[:, j]
    y = data.Yf[:, j]
    d1 = float(np.sum((gammaln(y + new) - gammaln(y + old)) - (gammaln(new) - gammaln(old))))
    rest = params.rest(j)
    new_row = rest + new
    if np.any(new_row <= 0):
        raise numcore.DomainError("updated row sums must be positive")
    # old sums formed like the new ones, so an unchanged column gives exactly 0
    old_row = rest + old
    yp = data.row_totals
    d2 = float(np.sum((gammaln(new_row) - gammaln(old_row))
                      - (gammaln(yp + new_row) - gammaln(yp + old_row))))
    return params.loglik + d1 + d2, d1, d2


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------


@nb.njit(cache=True, nogil=True)
def _cat_eval(X, S, k, beta, b0j, y, yrow, rest, pen, grad, H, want_derivs):
    """Category part ``f_j`` at ``beta``; fills the penalised gradient and Hessian.

    Returns ``(f_j, n_clipped)``.
    """
    n = X.shape[0]
    f = 0.0
    nclip = 0
    if want_derivs:
        for s in range(k):
            grad[s] = 0.0
            for r in range(k):
                H[s, r] = 0.0
    for i in range(n):
        e = b0j
        for s in range(k):
            e += X[i, S[s]] * beta[s]
        if e > 30.0:
            e = 30.0
            nclip += 1
        elif e < -30.0:
            e = -30.0
            nclip += 1
        g = math.exp(e)
        tot = rest[i] + g
        yt = yrow[i] + tot
        yg = y[i] + g
        l1, d1, t1 = _lgamma_psi(tot)
        l2, d2, t2 = _lgamma_psi(yt)
        f += l1 - l2
        A = d1 - d2
        B = t1 - t2
        if y[i] > 0.0:
            l3, d3, t3 = _lgamma_psi(yg)
            l4, d4, t4 = _lgamma_psi(g)
            f += l3 - l4
            A += d3 - d4
            B += t3 - t4
        if want_derivs and k > 0:
            w1 = g * A
            w2 = g * A + g * g * B
            for s in range(k):
                xs = X[i, S[s]]
                grad[s] += xs * w1
                xw = xs * w2
                for r in range(s + 1):
                    H[s, r] += xw * X[i, S[r]]
    if want_derivs:
        for s in range(k):
            grad[s] -= pen * beta[s]
            H[s, s] -= pen
            for r in range(s):
                H[r, s] = H[s, r]
    return f, nclip


@nb.njit(cache=True, nogil=True)
def _chol_neg(H, k, shift, L):
    """Cholesky of ``-H + shift*I`` into ``L``; False if not positive definite."""
    for i in range(k):
        for j in range(i + 1):
            s = -H[i, j]
            if i == j:
                s += shift
            for m in range(j):
                s -= L[i, m] * L[j, m]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, k):
            L[i, j] = 0.0
    return True


@nb.njit(cache=True, nogil=True)
def _chol_solve(L, k, b, out):
    for i in range(k):
        s = b[i]
        for m in range(i):
            s -= L[i, m] * out[m]
        out[i] = s / L[i, i]
    for i in range(k - 1, -1, -1):
        s = out[i]
        for m in range(i + 1, k):
            s -= L[m, i] * out[m]
        out[i] = s / L[i, i]


@nb.njit(cache=True, nogil=True)
def _newton(X, S, k, beta, b0j, y, yrow, rest, pen, gtol, xtol, maxit, grad, H, L):
    """Damped Newton ascent on the penalised category objective.

    Stops when ``max|grad| <= gtol`` or, inside the quadratic region, when the
    Newton step is below ``xtol`` (the step is then applied and the objective
    advanced by the quadratic-model gain instead of a further evaluation). Returns ``(f_j, penalised objective, max|grad|, status,
    n_clipped)``; status 0 converged, 1 iteration cap, 2 line search stalled.
    """
    step = np.empty(k)
    trial = np.empty(k)
    gtr = np.empty(k)
    Htr = np.empty((k, k))
    f, nclip = _cat_eval(X, S, k, beta, b0j, y, yrow, rest, pen, grad, H, True)
    pq = 0.0
    for s in range(k):
        pq += beta[s] * beta[s]
    F = f - 0.5 * pen * pq
    status = 1
    gn = 0.0
    for it in range(maxit + 1):
        gn = 0.0
        for s in range(k):
            gn = max(gn, abs(grad[s]))
        if gn <= gtol:
            status = 0
            break
        if it == maxit:
            break
        shift = 0.0
        while not _chol_neg(H, k, shift, L):
            shift = 1e-6 if shift == 0.0 else shift * 10.0
        _chol_solve(L, k, grad, step)
        smax = 0.0
        slope = 0.0
        for s in range(k):
            smax = max(smax, abs(step[s]))
            slope += grad[s] * step[s]
        if shift == 0.0 and smax <= xtol:
            # the quadratic model's gain, slope / 2, keeps F accurate to third order
            pq = 0.0
            for s in range(k):
                beta[s] += step[s]
                pq += beta[s] * beta[s]
            F += 0.5 * slope
            f = F + 0.5 * pen * pq
            status = 0
            break
        t = 1.0 if smax <= 5.0 else 5.0 / smax
        # once the predicted gain is below the rounding level of F the
        # Armijo test is meaningless; the full Newton step is taken
        tiny = t == 1.0 and slope <= 1e-11 * (1.0 + abs(F))
        accepted = False
        ft = f
        Ft = F
        nc = 0
        for ls in range(40):
            for s in range(k):
                trial[s] = beta[s] + t * step[s]
            ft, nc = _cat_eval(X, S, k, trial, b0j, y, yrow, rest, pen, gtr, Htr, True)
            pq = 0.0
            for s in range(k):
                pq += trial[s] * trial[s]
            Ft = ft - 0.5 * pen * pq
            if tiny or Ft >= F + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = 2
            break
        for s in range(k):
            beta[s] = trial[s]
            grad[s] = gtr[s]
            for r in range(k):
                H[s, r] = Htr[s, r]
        f = ft
        F = Ft
        nclip = nc
    return f, F, gn, status, nclip


@nb.njit(cache=True, nogil=True)
def _pmle_batch(X, y, yrow, rest, b0j, sets, sizes, init, c_over_n, gtol, xtol, maxit,
                out_beta, out_H, out_L, out_f, out_F, out_gn, out_status):
    """Fit every candidate set; ``out_L`` holds the Cholesky factor of ``-H``.

    When ``-H`` is not positive definite a ridge of 1e-6 is added and grown
    tenfold up to 1; beyond that the status becomes 3.
    """
    m = sizes.shape[0]
    kmax = sets.shape[1]
    grad = np.empty(kmax)
    H = np.empty((kmax, kmax))
    L = np.empty((kmax, kmax))
    beta = np.empty(kmax)
    nclip = 0
    for c in range(m):
        k = sizes[c]
        S = sets[c]
        for s in range(k):
            beta[s] = init[c, s]
        pen = c_over_n * k
        f, F, gn, st, nc = _newton(X, S, k, beta[:k], b0j, y, yrow, rest, pen, gtol, xtol,
                                   maxit, grad[:k], H[:k, :k], L[:k, :k])
        nclip += nc
        if st == 0:
            shift = 0.0
            while not _chol_neg(H[:k, :k], k, shift, L[:k, :k]):
                if shift >= 1.0:
                    st = 3
                    break
                shift = 1e-6 if shift == 0.0 else shift * 10.0
        for s in range(k):
            out_beta[c, s] = beta[s]
            for r in range(k):
                out_H[c, s, r] = H[s, r]
                out_L[c, s, r] = L[s, r] if r <= s else 0.0
        out_f[c] = f
        out_F[c] = F
        out_gn[c] = gn
        out_status[c] = st
    return nclip


# --------------------------------------------------------------------------
# category objective, gradient and PMLE
# --------------------------------------------------------------------------


def _category_inputs(data: DMData, params: DMParams, j: int):
    return (data.X, np.ascontiguousarray(data.Yf[:, j]), data.row_totals,
            np.ascontiguousarray(params.rest(j)), float(params.beta0[j]))


def _others_loglik(data: DMData, params: DMParams, j: int) -> float:
    """Log-likelihood terms not involving category ``j``'s concentrations."""
    g = np.delete(params.gamma, j, axis=1)
    y = np.delete(data.Yf, j, axis=1)
    return data.const + float(np.sum(gammaln(y + g) - gammaln(g)))


def dm_category_objective(data: DMData, params: DMParams, j: int, active, beta_j,
                          priors: DMPriors) -> float:
    """Penalised log-likelihood of ``beta_j`` on ``active`` (others held fixed)."""
    S = np.asarray(active, dtype=np.int64)
    b = np.asarray(beta_j, dtype=float).reshape(S.size)
    X, y, yrow, rest, b0j = _category_inputs(data, params, j)
    k = S.size
    pen = priors.c * k / data.n
    f, _ = _cat_eval(X, S, k, b, b0j, y, yrow, rest, pen, np.empty(k), np.empty((k, k)), False)
    return _others_loglik(data, params, j) + f - 0.5 * pen * float(b @ b)


def dm_grad_hess(data: DMData, params: DMParams, j: int, active, beta_j, priors: DMPriors):
    """Analytic gradient and Hessian of :func:`dm_category_objective`."""
    S = np.asarray(active, dtype=np.int64)
    b = np.ascontiguousarray(np.asarray(beta_j, dtype=float).reshape(S.size))
    X, y, yrow, rest, b0j = _category_inputs(data, params, j)
    k = S.size
    grad, H = np.empty(k), np.empty((k, k))
    _cat_eval(X, S, k, b, b0j, y, yrow, rest, priors.c * k / data.n, grad, H, True)
    return grad, H


@dataclass
class PMLEResult:
    beta: np.ndarray
    hessian: np.ndarray
    obj: float
    loglik: float
    grad_norm: float


def dm_pmle(data: DMData, params: DMParams, j: int, active, priors: DMPriors,
            init=None, gtol: float = 1e-8, maxit: int = 100,
            fallback: bool = True) -> PMLEResult:
    """Ridge-penalised MLE of ``beta_j`` on ``active``.

    Damped Newton with the analytic Hessian; if it fails, L-BFGS-B from the
    Newton iterate is tried when ``fallback`` is set. ``loglik`` is the full
    log-likelihood at the estimate, ``obj`` the penalised objective.
    """
    S = np.asarray(active, dtype=np.int64)
    k = S.size
    X, y, yrow, rest, b0j = _category_inputs(data, params, j)
    others = _others_loglik(data, params, j)
    pen = priors.c * k / data.n
    beta = (np.zeros(k) if init is None
            else np.array(init, dtype=float).reshape(k))
    grad, H, L = np.empty(k), np.empty((k, k)), np.empty((k, k))
    f, F, gn, status, nclip = _newton(X, S, k, beta, b0j, y, yrow, rest, pen, gtol, 0.0,
                                      maxit, grad, H, L)
    if nclip:
        log.warning("linear predictor clipped during the fit of category %d", j)
    if status != 0 and fallback and k > 0:
        def negobj(b):
            g, hh = np.empty(k), np.empty((k, k))
            val, _ = _cat_eval(X, S, k, b, b0j, y, yrow, rest, pen, g, hh, True)
            return -(val - 0.5 * pen * float(b @ b)), -g

        res = optimize.minimize(negobj, beta.copy(), jac=True, method="L-BFGS-B",
                                options={"gtol": gtol, "maxiter": 10 * maxit})
        beta = np.ascontiguousarray(res.x)
        f, F, gn, status, _ = _newton(X, S, k, beta, b0j, y, yrow, rest, pen, gtol, 0.0, 5,
                                      grad, H, L)
    if status != 0:
        raise PMLEError(f"category {j}: fit did not converge (max|grad| = {gn:.3g})",
                        beta.copy(), gn)
    return PMLEResult(beta, H.copy(), others + F, others + f, gn)


class WarmStartMemory:
    """Bounded LRU of previous estimates, one table per category."""

    def __init__(self, J: int, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.tables = [OrderedDict() for _ in range(J)]

    def get(self, j: int, key: bytes):
        tab = self.tables[j]
        val = tab.get(key)
        if val is not None:
            tab.move_to_end(key)
        return val

    def put(self, j: int, key: bytes, beta: np.ndarray) -> None:
        tab = self.tables[j]
        tab[key] = beta
        tab.move_to_end(key)
        if len(tab) > self.capacity:
            tab.popitem(last=False)


def _set_key(S: np.ndarray) -> bytes:
    return np.asarray(S, dtype=np.int64).tobytes()


# --------------------------------------------------------------------------
# candidate evaluation and inclusion proposals
# --------------------------------------------------------------------------


def lr_log10_pvalue(lr: float, dof: int) -> float:
    """``log10`` of the chi-square tail probability, floored like the linear case.

    Negative statistics are clamped to 0 (p-value 1) and an empty active set
    is tested with one degree of freedom.
    """
    if not lr > 0:
        return 0.0
    p = numcore.chi2_sf(lr, max(dof, 1))
    return math.log10(max(p, P_VALUE_FLOOR))


@dataclass
class CandidateSet:
    """PMLE fits and test-based dissimilarities for a list of active sets.

    ``chol[i]`` is the lower Cholesky factor of the (possibly shifted)
    negative Hessian at ``beta[i]``, or ``None`` when the fit failed.
    """

    sets: list
    beta: list
    chol: list
    loglik: np.ndarray
    d: np.ndarray
    ok: np.ndarray

    def log_q(self, lam: float) -> np.ndarray:
        w = np.power(-self.d, lam)
        return w - logsumexp(w)


def evaluate_candidates(data: DMData, params: DMParams, j: int, sets, priors: DMPriors,
                        baseline: float, memory: WarmStartMemory | None = None,
                        gtol: float = 1e-6, xtol: float = 1e-7,
                        maxit: int = 50) -> CandidateSet:
    """Fit every active set in ``sets`` for category ``j`` and score it against ``baseline``.

    Starting points come from ``memory`` when the set was fitted before,
    otherwise from the chain's current coefficients (0 for new entries).
    """
    m = len(sets)
    sizes = np.array([len(S) for S in sets], dtype=np.int64)
    kmax = max(1, int(sizes.max(initial=0)))
    S_arr = np.zeros((m, kmax), dtype=np.int64)
    init = np.zeros((m, kmax))
    cur_beta = params.beta[:, j]
    keys = [_set_key(S) for S in sets]
    for c, S in enumerate(sets):
        k = len(S)
        S_arr[c, :k] = S
        warm = memory.get(j, keys[c]) if memory is not None else None
        init[c, :k] = warm if warm is not None else cur_beta[S]
    X, y, yrow, rest, b0j = _category_inputs(data, params, j)
    out_beta = np.zeros((m, kmax))
    out_H = np.zeros((m, kmax, kmax))
    out_L = np.zeros((m, kmax, kmax))
    out_f, out_F, out_gn = np.empty(m), np.empty(m), np.empty(m)
    out_status = np.empty(m, dtype=np.int64)
    nclip = _pmle_batch(X, y, yrow, rest, b0j, S_arr, sizes, init, priors.c / data.n, gtol,
                        xtol, maxit, out_beta, out_H, out_L, out_f, out_F, out_gn, out_status)
    if nclip:
        log.warning("linear predictor clipped while scoring category %d", j)
    ll = _others_loglik(data, params, j) + out_f
    ok = out_status == 0
    lr = np.where(ok, 2.0 * (ll - baseline), 0.0)
    d = np.zeros(m)
    pos = lr > 0
    if pos.any():
        pv = np.atleast_1d(numcore.chi2_sf(lr[pos], np.maximum(sizes[pos], 1)))
        d[pos] = np.log10(np.maximum(pv, P_VALUE_FLOOR))
    betas, chols = [], []
    for c in range(m):
        k = int(sizes[c])
        b = out_beta[c, :k].copy()
        betas.append(b)
        if ok[c]:
            chols.append(out_L[c, :k, :k].copy())
            if memory is not None:
                memory.put(j, keys[c], b)
        else:
            chols.append(None)
            log.warning("category %d: fit for active set %s failed (status %d); candidate "
                        "gets minimal weight", j, list(map(int, sets[c])), int(out_status[c]))
    return CandidateSet(list(sets), betas, chols, ll, d, ok)


def flip_sets(active: np.ndarray, P: int) -> list:
    """Active sets obtained by flipping each predictor in turn."""
    cur = np.zeros(P, dtype=bool)
    cur[active] = True
    out = []
    for p in range(P):
        b = cur.copy()
        b[p] = not b[p]
        out.append(np.flatnonzero(b))
    return out


def dm_category_proposal_probs(data: DMData, params: DMParams, j: int, priors: DMPriors,
                               lambda_j: float, memory: WarmStartMemory | None = None,
                               gtol: float = 1e-6) -> np.ndarray:
    """Inclusion-flip proposal probabilities for category ``j``."""
    if not lambda_j > 0:
        raise ValueError("lambda must be positive")
    base = dm_baseline_loglik(data, params.beta0)
    cs = evaluate_candidates(data, params, j, flip_sets(params.active(j), data.P), priors,
                             base, memory, gtol=gtol)
    return np.exp(cs.log_q(lambda_j))
