"""Variable-selection chain for the conjugate linear model.

Each iteration is a similarity-driven flip, optionally followed by a
graph-guided swap. The Hamming jump ``d_H`` is measured across the whole
iteration, so it lies in {0, 1} without swaps and in {0, 1, 2, 3} with them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore, traceio
from .adapt import AdaptConfig, AdaptState, record_step
from .conjlinear import InclusionVector, LinearProblem, get_dissimilarity
from .localmove import DependencyGraph, estimate_graph, mh_accept_swap, sample_swap
from .proposal import build_proposal, mh_accept_flip, sample_proposal

__all__ = ["SamplerConfig", "ChainTrace", "run_chain", "hamming", "lambda_sweep"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    """Settings of one chain.

    ``lam`` is the fixed exponent, or the starting value when ``adapt`` is
    set. The swap graph is ``graph`` if given, otherwise the correlation
    graph of the design at ``graph_threshold``.
    """

    T: int = 20000
    burn_in: int = 10000
    dissim: str = "F"
    lam: float = 0.7
    adapt: AdaptConfig | None = None
    swap: bool = False
    lambda_move: float = 1.25
    graph: DependencyGraph | None = None
    graph_threshold: float = 0.5
    initial: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be positive")
        if not 0 <= self.burn_in < self.T:
            raise ValueError("need 0 <= burn_in < T")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.lambda_move > 0:
            raise ValueError("lambda_move must be positive")
        get_dissimilarity(self.dissim)


@dataclass
class ChainTrace:
    """Per-iteration record; ``configs[0]`` is the initial state.

    ``swap_acc`` is -1 where no swap was attempted.
    """

    configs: np.ndarray
    flip_acc: np.ndarray
    swap_acc: np.ndarray
    d_h: np.ndarray
    lam: np.ndarray
    log_post: np.ndarray
    burn_in: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.flip_acc.shape[0]

    @property
    def P(self) -> int:
        return self.configs.shape[1]

    @property
    def model_size(self) -> np.ndarray:
        return self.configs[1:].sum(axis=1, dtype=np.int64)

    def samples(self, burn_in: int | None = None) -> np.ndarray:
        b = self.burn_in if burn_in is None else burn_in
        return self.configs[1 + b:]

    def flip_acceptance_rate(self, burn_in: int | None = None) -> float:
        b = self.burn_in if burn_in is None else burn_in
        return float(self.flip_acc[b:].mean())

    def swap_acceptance_rate(self, burn_in: int | None = None) -> float:
        b = self.burn_in if burn_in is None else burn_in
        s = self.swap_acc[b:]
        tried = s >= 0
        return float(s[tried].mean()) if tried.any() else float("nan")

    def columns(self) -> dict:
        return {
            "iteration": np.arange(1, self.T + 1),
            "dH": self.d_h,
            "flip_acc": self.flip_acc,
            "swap_acc": self.swap_acc,
            "lambda": self.lam,
            "log_post": self.log_post,
            "model_size": self.model_size,
        }

    def write(self, outdir, stem: str = "trace") -> tuple[Path, Path]:
        outdir = Path(outdir)
        csv_path, bin_path = outdir / f"{stem}.csv", outdir / f"{stem}_configs.bin"
        traceio.write_columns(csv_path, self.columns())
        traceio.write_configs(bin_path, self.configs, self.P)
        return csv_path, bin_path

    @classmethod
    def read(cls, outdir, stem: str = "trace", burn_in: int = 0) -> "ChainTrace":
        outdir = Path(outdir)
        cols = traceio.read_columns(outdir / f"{stem}.csv")
        configs, P, J = traceio.read_configs(outdir / f"{stem}_configs.bin")
        if J != 1:
            raise ValueError("not a linear-model trace")
        if configs.shape[0] != cols["iteration"].shape[0] + 1:
            raise ValueError("trace CSV and configuration file disagree in length")
        return cls(configs, cols["flip_acc"].astype(np.int8), cols["swap_acc"].astype(np.int8),
                   cols["dH"].astype(np.int16), cols["lambda"].astype(float),
                   cols["log_post"].astype(float), burn_in)


def hamming(a: InclusionVector, b: InclusionVector) -> int:
    """Number of coordinates where ``a`` and ``b`` differ."""
    if len(a) != len(b):
        raise numcore.DomainError(f"length mismatch: {len(a)} vs {len(b)}")
    return int(np.count_nonzero(a.bits != b.bits))


def _resolve_graph(problem: LinearProblem, config: SamplerConfig) -> DependencyGraph:
    if config.graph is not None:
        if config.graph.P != problem.P:
            raise ValueError("graph size does not match the number of predictors")
        return config.graph
    return estimate_graph(problem.X, config.graph_threshold)


def run_chain(problem: LinearProblem, config: SamplerConfig,
              rng: np.random.Generator | None = None) -> ChainTrace:
    """Run ``config.T`` iterations and return the full trace."""
    rng = numcore.make_rng(config.seed) if rng is None else rng
    dissim = get_dissimilarity(config.dissim)
    P, T = problem.P, config.T
    xi = (InclusionVector(np.asarray(config.initial)) if config.initial is not None
          else InclusionVector.zeros(P))
    if len(xi) != P:
        raise ValueError("initial configuration has the wrong length")
    graph = _resolve_graph(problem, config) if config.swap else None
    acfg = config.adapt.resolved(T) if config.adapt is not None else None
    astate = AdaptState(config.lam) if acfg is not None else None
    lam = config.lam

    configs = np.empty((T + 1, P), dtype=np.uint8)
    configs[0] = xi.bits
    flip_acc = np.zeros(T, dtype=np.int8)
    swap_acc = np.full(T, -1, dtype=np.int8)
    d_h = np.zeros(T, dtype=np.int16)
    lams = np.empty(T)
    log_post = np.empty(T)

    # proposals depend on (state, lambda) only; dropped whenever lambda moves
    memo = {}
    for t in range(1, T + 1):
        prev = xi
        lams[t - 1] = lam
        fwd = memo.get(xi.key)
        if fwd is None:
            fwd = memo[xi.key] = build_proposal(problem, xi, dissim, lam)
        cand, _ = sample_proposal(fwd, rng)
        res = mh_accept_flip(problem, xi, cand, dissim, lam, rng,
                             forward=fwd, reverse=memo.get(cand.key))
        if res.reverse is not None:
            memo[cand.key] = res.reverse
        xi = res.state
        flip_acc[t - 1] = res.accepted

        if astate is not None:
            record_step(astate, acfg, t, res.accepted)
            if astate.lam != lam:
                lam = astate.lam
                memo.clear()

        if graph is not None:
            draw = sample_swap(problem, xi, graph, dissim, config.lambda_move, rng)
            if draw is not None:
                cand_s, lfwd = draw
                sres = mh_accept_swap(problem, xi, cand_s, graph, dissim, config.lambda_move,
                                      rng, log_forward=lfwd)
                swap_acc[t - 1] = sres.accepted
                xi = sres.state

        configs[t] = xi.bits
        d_h[t - 1] = hamming(prev, xi)
        log_post[t - 1] = problem.log_posterior(xi)

    meta = {"seed": config.seed, "P": P, "T": T}
    if astate is not None:
        meta["adapt_epochs"] = astate.k
    return ChainTrace(configs, flip_acc, swap_acc, d_h, lams, log_post, config.burn_in, meta)


def lambda_sweep(problem: LinearProblem, lambdas, iterations: int, burn_in: int,
                 dissim: str = "F", seed: int = 0, return_traces: bool = False):
    """Post-burn-in flip acceptance of one fixed-lambda chain per value.

    Chain ``i`` draws from the ``i``-th child stream of ``seed``.
    """
    lambdas = [float(v) for v in lambdas]
    if any(not v > 0 for v in lambdas):
        raise ValueError("lambda values must be positive")
    seeds = numcore.spawn_seeds(seed, len(lambdas))
    rates, traces = [], []
    for lam, ss in zip(lambdas, seeds):
        cfg = SamplerConfig(T=iterations, burn_in=burn_in, dissim=dissim, lam=lam, seed=seed)
        tr = run_chain(problem, cfg, rng=numcore.make_rng(ss))
        rates.append(tr.flip_acceptance_rate())
        if return_traces:
            traces.append(tr)
    rates = np.array(rates)
    return (rates, traces) if return_traces else rates
