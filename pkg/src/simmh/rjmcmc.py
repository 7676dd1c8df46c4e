"""Reversible-jump sampler for Dirichlet-Multinomial variable selection.

Every iteration updates the intercepts by a Gaussian random walk and then
visits the categories in order. A category update flips one inclusion
indicator drawn from the test-based proposal, draws the coefficients of the
new active set from the Laplace approximation at its penalised MLE, and
corrects with the reverse flip and the Laplace density of the current
coefficients.

Proposal ingredients for category ``j`` depend on the intercepts and on the
other categories only, so they are cached per inclusion vector until one of
those changes. Because the reverse proposal probability is at most 1, a
move whose acceptance ratio without that factor already falls below the
uniform draw is rejected before the reverse proposal is built; the
decision is identical to the one from the complete ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from . import numcore, traceio
from .adapt import AdaptConfig, AdaptState, RWScaleAdapter, record_step
from .dirmult import (
    CandidateSet,
    DMData,
    DMParams,
    DMPriors,
    WarmStartMemory,
    _loglik_from_gamma,
    beta0_hessian,
    dm_baseline_loglik,
    dm_incremental_loglik,
    dm_link_column,
    dm_total_loglik,
    evaluate_candidates,
    flip_sets,
    link,
)
from .localmove import DependencyGraph, estimate_graph

__all__ = [
    "RJConfig",
    "RJTrace",
    "RJSampler",
    "log_joint_posterior",
    "laplace_logpdf",
    "run_rjmcmc",
]

log = logging.getLogger(__name__)

_LOG_2PI = numcore.LOG_2PI


@dataclass(frozen=True)
class RJConfig:
    """Settings of one reversible-jump run.

    ``adapt.t_end=None`` ends the exponent adaptation at the burn-in. The
    intercept random walk starts at ``beta0_var * I`` or, when ``beta0_var``
    is None, at ``2.38^2 / J`` times the inverse negative Hessian of the
    log posterior in the intercepts at the starting point; it is tuned toward
    ``beta0_target`` acceptance during the burn-in.
    """

    T: int = 20000
    burn_in: int = 10000
    lam0: float = 1.0
    adapt: AdaptConfig | None = field(default_factory=AdaptConfig)
    beta0_var: float | None = None
    beta0_target: float = 0.234
    s2: float = 10.0
    r2: float = 10.0
    a: float = 1.0
    b: float = 9.0
    c: float = 1.0
    local_move: bool = False
    lambda_move: float = 1.25
    graph_threshold: float = 0.5
    gtol: float = 1e-6
    warm_capacity: int = 4096
    drift_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or not 0 <= self.burn_in < self.T:
            raise ValueError("need T >= 1 and 0 <= burn_in < T")
        if not (self.lam0 > 0 and self.lambda_move > 0) or (
                self.beta0_var is not None and self.beta0_var < 0):
            raise ValueError("lam0 and lambda_move must be positive, beta0_var nonnegative")
        if not 0 < self.beta0_target < 1:
            raise ValueError("beta0_target must lie in (0, 1)")

    def priors(self, J: int) -> DMPriors:
        return DMPriors.default(J, self.s2, self.r2, self.a, self.b, self.c)


@dataclass
class RJTrace:
    """Per-iteration record; ``xi[0]`` and ``beta[0]`` hold the initial state.

    ``xi`` and ``beta`` rows are P x J matrices flattened row-major.
    ``cat_acc`` holds the flip decisions per category, ``swap_acc`` the
    local-swap decisions (-1 where no swap was attempted).
    """

    xi: np.ndarray
    beta: np.ndarray
    beta0: np.ndarray
    beta0_acc: np.ndarray
    cat_acc: np.ndarray
    swap_acc: np.ndarray
    lam: np.ndarray
    log_post: np.ndarray
    P: int
    J: int
    burn_in: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.log_post.shape[0]

    def xi_matrices(self) -> np.ndarray:
        return self.xi.reshape(-1, self.P, self.J)

    @property
    def model_size(self) -> np.ndarray:
        return self.xi[1:].sum(axis=1, dtype=np.int64)

    @property
    def d_h(self) -> np.ndarray:
        return np.count_nonzero(self.xi[1:] != self.xi[:-1], axis=1)

    def pip(self, burn_in: int | None = None) -> np.ndarray:
        b = self.burn_in if burn_in is None else burn_in
        return self.xi_matrices()[1 + b:].mean(axis=0)

    def columns(self) -> dict:
        cols = {"iteration": np.arange(1, self.T + 1), "dH": self.d_h,
                "beta0_acc": self.beta0_acc}
        for j in range(self.J):
            cols[f"beta0_{j}"] = self.beta0[:, j]
        for j in range(self.J):
            cols[f"acc_{j}"] = self.cat_acc[:, j]
        for j in range(self.J):
            cols[f"swap_acc_{j}"] = self.swap_acc[:, j]
        for j in range(self.J):
            cols[f"lambda_{j}"] = self.lam[:, j]
        cols["log_post"] = self.log_post
        cols["model_size"] = self.model_size
        return cols

    def write(self, outdir, stem: str = "trace") -> list[Path]:
        outdir = Path(outdir)
        csv_path = outdir / f"{stem}.csv"
        bin_path = outdir / f"{stem}_configs.bin"
        beta_path = outdir / f"{stem}_beta.csv"
        traceio.write_columns(csv_path, self.columns())
        traceio.write_configs(bin_path, self.xi, self.P, self.J, magic=traceio.MAGIC_DM)
        # active coefficients in long format, initial state as iteration 0
        B = self.beta.reshape(self.beta.shape[0], self.P, self.J)
        t, p, j = np.nonzero(B)
        traceio.write_columns(beta_path, {"iteration": t, "p": p, "j": j, "value": B[t, p, j]})
        return [csv_path, bin_path, beta_path]

    @classmethod
    def read(cls, outdir, stem: str = "trace", burn_in: int = 0) -> "RJTrace":
        outdir = Path(outdir)
        cols = traceio.read_columns(outdir / f"{stem}.csv")
        xi, P, J = traceio.read_configs(outdir / f"{stem}_configs.bin")
        T = cols["iteration"].shape[0]
        if xi.shape[0] != T + 1:
            raise ValueError("trace CSV and configuration file disagree in length")
        bl = traceio.read_columns(outdir / f"{stem}_beta.csv")
        beta = np.zeros((T + 1, P * J))
        if bl:
            beta[bl["iteration"], bl["p"] * J + bl["j"]] = bl["value"]
        stack = lambda pre: np.column_stack([cols[f"{pre}_{j}"] for j in range(J)])
        return cls(xi, beta, stack("beta0").astype(float), cols["beta0_acc"].astype(np.int8),
                   stack("acc").astype(np.int8), stack("swap_acc").astype(np.int8),
                   stack("lambda").astype(float), cols["log_post"].astype(float), P, J, burn_in)


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------


def _log_incl_prior(priors: DMPriors, xi) -> float:
    pi = priors.inclusion_prob
    k = int(np.sum(xi))
    return k * math.log(pi) + (np.size(xi) - k) * math.log1p(-pi)


def log_joint_posterior(data: DMData, params: DMParams, priors: DMPriors,
                        loglik: float | None = None) -> float:
    """Log-likelihood plus Gaussian intercept and coefficient priors plus inclusion priors."""
    ll = dm_total_loglik(data, params) if loglik is None else loglik
    s2 = np.broadcast_to(priors.s2, (data.J,))
    r2 = np.broadcast_to(priors.r2, (data.J,))
    lp = float(np.sum(-0.5 * params.beta0 ** 2 / s2 - 0.5 * np.log(2 * np.pi * s2)))
    p_idx, j_idx = np.nonzero(params.xi)
    b = params.beta[p_idx, j_idx]
    lp += float(np.sum(-0.5 * b ** 2 / r2[j_idx] - 0.5 * np.log(2 * np.pi * r2[j_idx])))
    return ll + lp + _log_incl_prior(priors, params.xi)


def laplace_logpdf(x, mean, chol) -> float:
    """Log-density of N(mean, (L L')^{-1}) where ``chol = L`` factors the precision."""
    k = len(mean)
    if k == 0:
        return 0.0
    z = chol.T @ (np.asarray(x) - mean)
    return float(-0.5 * (z @ z) + np.log(np.diag(chol)).sum() - 0.5 * k * _LOG_2PI)


def _laplace_draw(mean, chol, rng) -> tuple[np.ndarray, float]:
    k = len(mean)
    if k == 0:
        return np.zeros(0), 0.0
    z = rng.standard_normal(k)
    x = mean + solve_triangular(chol, z, lower=True, trans="T")
    return x, float(-0.5 * (z @ z) + np.log(np.diag(chol)).sum() - 0.5 * k * _LOG_2PI)


def _log_coef_prior(b: np.ndarray, r2: float) -> float:
    return float(np.sum(-0.5 * b ** 2 / r2 - 0.5 * math.log(2 * math.pi * r2)))


# --------------------------------------------------------------------------
# sampler
# --------------------------------------------------------------------------


class RJSampler:
    """State, caches and move implementations of one chain."""

    def __init__(self, data: DMData, config: RJConfig, params: DMParams | None = None,
                 rng: np.random.Generator | None = None):
        self.data = data
        self.config = config
        self.priors = config.priors(data.J)
        self.params = DMParams.initial(data) if params is None else params
        self.rng = numcore.make_rng(config.seed) if rng is None else rng
        J = data.J
        self.memory = WarmStartMemory(J, config.warm_capacity)
        self.version = [0] * J
        self._cands: list[dict] = [{} for _ in range(J)]
        self._cands_ver = [-1] * J
        self._baseline = dm_baseline_loglik(data, self.params.beta0)
        self.lam = np.full(J, float(config.lam0))
        acfg = config.adapt
        if acfg is not None:
            acfg = acfg.resolved(config.T) if acfg.t_end is not None else replace(
                acfg, t_end=max(config.burn_in, acfg.t_start + 1))
        self.adapt_cfg = acfg
        self.adapt = [AdaptState(config.lam0) for _ in range(J)] if acfg is not None else None
        rw_cfg = AdaptConfig(t_start=0, t_end=max(config.burn_in, 1))
        self.rw = RWScaleAdapter(self._initial_rw_cov(), rw_cfg, config.beta0_target)
        self.graph = None
        if config.local_move:
            self.graph = estimate_graph(data.X, config.graph_threshold)
        self.n_accepted = 0
        self.max_drift = 0.0

    def _initial_rw_cov(self) -> np.ndarray:
        J = self.data.J
        if self.config.beta0_var is not None:
            return self.config.beta0_var * np.eye(J)
        prec = -beta0_hessian(self.data, self.params) + np.diag(1.0 / self.priors.s2)
        try:
            L = numcore.cholesky(prec)
        except numcore.FactorizationError:
            log.warning("intercept curvature not negative definite; using 0.01 * I")
            return 0.01 * np.eye(J)
        inv = numcore.cho_solve(L, np.eye(J))
        return 2.38 ** 2 / J * 0.5 * (inv + inv.T)

    # -- cache plumbing ---------------------------------------------------

    def _bump(self, exclude: int | None = None) -> None:
        for j in range(self.data.J):
            if j != exclude:
                self.version[j] += 1

    def candidates(self, j: int, active: np.ndarray, kind: str = "flip",
                   sets=None) -> CandidateSet:
        """Fits for the flip neighborhood (or given ``sets``) of ``active``, cached."""
        if self._cands_ver[j] != self.version[j]:
            self._cands[j].clear()
            self._cands_ver[j] = self.version[j]
        key = (kind, np.asarray(active, dtype=np.int64).tobytes())
        if sets is not None:
            key += (tuple(np.asarray(s, dtype=np.int64).tobytes() for s in sets),)
        cs = self._cands[j].get(key)
        if cs is None:
            if sets is None:
                sets = flip_sets(active, self.data.P) if kind == "flip" else [active]
            cs = evaluate_candidates(self.data, self.params, j, sets, self.priors,
                                     self._baseline, self.memory, gtol=self.config.gtol)
            self._cands[j][key] = cs
        return cs

    def _current_fit(self, j: int, S: np.ndarray):
        cs = self.candidates(j, S, kind="self")
        return cs.beta[0], cs.chol[0], bool(cs.ok[0])

    # -- moves ------------------------------------------------------------

    def update_beta0(self) -> bool:
        """Joint Gaussian random walk on the intercepts (symmetric proposal)."""
        data, p = self.data, self.params
        J = data.J
        u = self.rng.random()
        L = np.linalg.cholesky(self.rw.cov) if np.any(self.rw.cov) else np.zeros((J, J))
        delta = L @ self.rng.standard_normal(J)
        if not np.any(delta):
            return True
        s2 = self.priors.s2
        new_b0 = p.beta0 + delta
        new_eta = p.eta + delta
        new_gamma = link(new_eta)
        new_ll = _loglik_from_gamma(data, new_gamma)
        log_alpha = (new_ll - p.loglik
                     + float(np.sum(-0.5 * (new_b0 ** 2 - p.beta0 ** 2) / s2)))
        if not (u > 0 and math.log(u) < log_alpha):
            return False
        p.beta0 = new_b0
        p.eta = new_eta
        p.gamma = new_gamma
        p.gamma_row = new_gamma.sum(axis=1)
        p.loglik = new_ll
        self._baseline = dm_baseline_loglik(data, new_b0)
        self._bump()
        return True

    def _propose_coefficients(self, cs: CandidateSet, idx: int):
        return _laplace_draw(cs.beta[idx], cs.chol[idx], self.rng)

    def _jump(self, j: int, S_new: np.ndarray, beta_new: np.ndarray, log_fwd_dens: float,
              log_q_fwd: float, u: float):
        """Common part of flip and swap moves; returns ``(A, new column state)``.

        ``A`` is the log acceptance ratio without the reverse proposal
        probability of the inclusion move.
        """
        data, p, pri = self.data, self.params, self.priors
        S = p.active(j)
        beta_cur = p.beta[S, j]
        bhat_cur, chol_cur, ok = self._current_fit(j, S)
        if not ok:
            log.warning("category %d: no Laplace approximation at the current set; "
                        "move rejected", j)
            return -math.inf, None
        eta_col, gamma_col = dm_link_column(data.X, p.beta0[j], S_new, beta_new)
        try:
            ll_new = dm_incremental_loglik(data, p, j, gamma_col)[0]
        except numcore.DomainError as exc:
            log.warning("category %d: %s; move rejected", j, exc)
            return -math.inf, None
        r2 = float(pri.r2[j])
        pi = pri.inclusion_prob
        dk = len(S_new) - len(S)
        log_prior = (_log_coef_prior(beta_new, r2) - _log_coef_prior(beta_cur, r2)
                     + dk * (math.log(pi) - math.log1p(-pi)))
        A = (ll_new - p.loglik + log_prior
             + laplace_logpdf(beta_cur, bhat_cur, chol_cur) - log_fwd_dens - log_q_fwd)
        return A, (S_new, beta_new, eta_col, gamma_col, ll_new)

    def _commit(self, j: int, new) -> None:
        S_new, beta_new, eta_col, gamma_col, ll_new = new
        self.params.set_category(j, S_new, beta_new, eta_col, gamma_col, ll_new)
        self._bump(exclude=j)
        self.n_accepted += 1
        if self.config.drift_every and self.n_accepted % self.config.drift_every == 0:
            self.check_drift()

    def update_category(self, j: int) -> bool:
        """Flip move for category ``j`` with Laplace coefficient proposals."""
        rng, p = self.rng, self.params
        lam = self.lam[j]
        S = p.active(j)
        fwd = self.candidates(j, S)
        log_q = fwd.log_q(lam)
        cdf = np.cumsum(np.exp(log_q))
        idx = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        u = rng.random()
        if not fwd.ok[idx]:
            return False
        beta_new, log_dens = self._propose_coefficients(fwd, idx)
        A, new = self._jump(j, fwd.sets[idx], beta_new, log_dens, float(log_q[idx]), u)
        log_u = math.log(u) if u > 0 else -math.inf
        if not log_u < A:
            return False
        # the flip back from the proposed set is the same predictor index
        rev = self.candidates(j, fwd.sets[idx])
        log_alpha = A + float(rev.log_q(lam)[idx])
        if not log_u < log_alpha:
            return False
        self._commit(j, new)
        return True

    def _swap_sets(self, S: np.ndarray, p: int):
        bits = np.zeros(self.data.P, dtype=np.uint8)
        bits[S] = 1
        nbrs = self.graph.neighbors(p)
        qs = nbrs[bits[nbrs] == 0]
        sets = []
        for q in qs:
            b = bits.copy()
            b[p] = 0
            b[q] = 1
            sets.append(np.flatnonzero(b))
        return qs, sets

    def _swappable(self, S: np.ndarray) -> list[int]:
        bits = np.zeros(self.data.P, dtype=np.uint8)
        bits[S] = 1
        return [int(p) for p in S
                if self.graph.neighbors(p).size and not bits[self.graph.neighbors(p)].all()]

    def _swap_log_q(self, j: int, S: np.ndarray, p: int):
        qs, sets = self._swap_sets(S, p)
        cs = self.candidates(j, S, kind=f"swap{p}", sets=sets)
        w = np.power(-cs.d, self.config.lambda_move)
        return qs, cs, w - np.logaddexp.reduce(w)

    def update_swap(self, j: int) -> int:
        """Local swap in category ``j``; -1 if no active predictor has an inactive neighbor."""
        rng, p = self.rng, self.params
        S = p.active(j)
        A_set = self._swappable(S)
        if not A_set:
            return -1
        pp = A_set[int(rng.integers(len(A_set)))]
        qs, cs, lq = self._swap_log_q(j, S, pp)
        cdf = np.cumsum(np.exp(lq))
        i = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        u = rng.random()
        if not cs.ok[i]:
            return 0
        beta_new, log_dens = self._propose_coefficients(cs, i)
        log_fwd = -math.log(len(A_set)) + float(lq[i])
        A, new = self._jump(j, cs.sets[i], beta_new, log_dens, log_fwd, u)
        S_new = cs.sets[i]
        A_rev = self._swappable(S_new)
        log_u = math.log(u) if u > 0 else -math.inf
        if not log_u < A - math.log(len(A_rev)):
            return 0
        qs_r, _, lq_r = self._swap_log_q(j, S_new, int(qs[i]))
        hit = np.flatnonzero(qs_r == pp)
        log_alpha = A - math.log(len(A_rev)) + float(lq_r[hit[0]])
        if not log_u < log_alpha:
            return 0
        self._commit(j, new)
        return 1

    def check_drift(self) -> float:
        """Recompute the log-likelihood from scratch and resynchronise the cache."""
        full = dm_total_loglik(self.data, self.params)
        drift = abs(full - self.params.loglik)
        self.max_drift = max(self.max_drift, drift)
        if drift > 1e-6:
            log.warning("cached log-likelihood drifted by %.3g; resynchronised", drift)
        self.params.loglik = full
        return drift

    def log_posterior(self) -> float:
        return log_joint_posterior(self.data, self.params, self.priors, self.params.loglik)

    # -- driver -----------------------------------------------------------

    def run(self) -> RJTrace:
        cfg, data = self.config, self.data
        T, P, J = cfg.T, data.P, data.J
        xi = np.empty((T + 1, P * J), dtype=np.uint8)
        beta = np.empty((T + 1, P * J))
        xi[0] = self.params.xi.ravel()
        beta[0] = self.params.beta.ravel()
        beta0 = np.empty((T, J))
        b0_acc = np.zeros(T, dtype=np.int8)
        cat_acc = np.zeros((T, J), dtype=np.int8)
        swap_acc = np.full((T, J), -1, dtype=np.int8)
        lams = np.empty((T, J))
        log_post = np.empty(T)
        for t in range(1, T + 1):
            acc = self.update_beta0()
            b0_acc[t - 1] = acc
            self.rw.record(t, acc)
            lams[t - 1] = self.lam
            for j in range(J):
                acc_j = self.update_category(j)
                cat_acc[t - 1, j] = acc_j
                if self.adapt is not None:
                    st = record_step(self.adapt[j], self.adapt_cfg, t, acc_j)
                    self.lam[j] = st.lam
                if self.graph is not None:
                    swap_acc[t - 1, j] = self.update_swap(j)
            if t % 1000 == 0:
                self.check_drift()
            xi[t] = self.params.xi.ravel()
            beta[t] = self.params.beta.ravel()
            beta0[t - 1] = self.params.beta0
            log_post[t - 1] = self.log_posterior()
        meta = {"seed": cfg.seed, "max_drift": self.max_drift,
                "beta0_cov": self.rw.cov.tolist()}
        return RJTrace(xi, beta, beta0, b0_acc, cat_acc, swap_acc, lams, log_post, P, J,
                       cfg.burn_in, meta)


def run_rjmcmc(data: DMData, config: RJConfig, params: DMParams | None = None) -> RJTrace:
    """Run the sampler from ``params`` (default: intercept-only start)."""
    return RJSampler(data, config, params).run()
