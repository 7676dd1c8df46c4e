"""Graph-guided swap moves that exchange an active predictor for an inactive neighbor."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .conjlinear import DissimilarityFn, EvaluationError, InclusionVector
from .proposal import MoveResult, ProposalError

__all__ = [
    "DependencyGraph",
    "SwapCandidate",
    "SwapProposal",
    "estimate_graph",
    "read_adjacency",
    "write_adjacency",
    "active_swappable_set",
    "build_swap_proposal",
    "sample_swap",
    "swap_log_prob",
    "mh_accept_swap",
    "swap_kernel_matrix",
]

log = logging.getLogger(__name__)


class DependencyGraph:
    """Undirected predictor graph stored as sorted adjacency arrays."""

    def __init__(self, adjacency):
        adj = tuple(np.array(sorted(set(int(q) for q in nbrs)), dtype=np.int64)
                    for nbrs in adjacency)
        P = len(adj)
        for p, nbrs in enumerate(adj):
            if nbrs.size and (nbrs[0] < 0 or nbrs[-1] >= P):
                raise ValueError(f"neighbor index out of range for node {p}")
            if p in nbrs:
                raise ValueError(f"self-loop at node {p}")
            for q in nbrs:
                if p not in adj[q]:
                    raise ValueError(f"asymmetric adjacency: {p}->{q} without {q}->{p}")
        self.adjacency = adj

    @classmethod
    def from_edges(cls, P: int, edges) -> "DependencyGraph":
        adj = [set() for _ in range(P)]
        for p, q in edges:
            p, q = int(p), int(q)
            if p == q:
                raise ValueError(f"self-loop at node {p}")
            adj[p].add(q)
            adj[q].add(p)
        return cls(adj)

    @property
    def P(self) -> int:
        return len(self.adjacency)

    def neighbors(self, p: int) -> np.ndarray:
        return self.adjacency[p]

    def edges(self) -> list[tuple[int, int]]:
        return [(p, int(q)) for p, nbrs in enumerate(self.adjacency) for q in nbrs if p < q]

    def __eq__(self, other):
        return isinstance(other, DependencyGraph) and self.edges() == other.edges()


def estimate_graph(X, threshold: float = 0.5) -> DependencyGraph:
    """Edge (p, q) whenever the absolute sample correlation reaches ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    xc = X - X.mean(axis=0)
    sd = np.sqrt((xc ** 2).sum(axis=0))
    const = sd <= 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))
    if np.any(const):
        warnings.warn(f"constant columns {np.flatnonzero(const).tolist()} get no edges",
                      RuntimeWarning, stacklevel=2)
    z = np.where(const, 0.0, xc / np.where(const, 1.0, sd))
    R = z.T @ z
    np.fill_diagonal(R, 0.0)
    A = np.abs(R) >= threshold
    return DependencyGraph([np.flatnonzero(A[p]) for p in range(X.shape[1])])


def read_adjacency(path, P: int) -> DependencyGraph:
    """Read ``p q`` edge lines (0-based); ``#`` lines are comments."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'p q'")
        p, q = int(parts[0]), int(parts[1])
        if not (0 <= p < P and 0 <= q < P):
            raise ValueError(f"{path}:{lineno}: index out of range for P={P}")
        edges.append((p, q))
    return DependencyGraph.from_edges(P, edges)


def write_adjacency(graph: DependencyGraph, path) -> None:
    lines = ["# p q (0-based)"] + [f"{p} {q}" for p, q in graph.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def active_swappable_set(xi: InclusionVector, graph: DependencyGraph) -> list[int]:
    """Active predictors with at least one inactive graph neighbor."""
    bits = xi.bits
    return [int(p) for p in xi.active()
            if graph.adjacency[p].size and not bits[graph.adjacency[p]].all()]


@dataclass(frozen=True)
class SwapCandidate:
    deactivate: int
    activate: int
    state: InclusionVector


@dataclass(frozen=True)
class SwapProposal:
    """Full swap distribution from ``origin``: candidates with log-probabilities."""

    origin: InclusionVector
    candidates: tuple[SwapCandidate, ...]
    log_probabilities: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities)


def _conditional(problem, xi: InclusionVector, p: int, graph: DependencyGraph,
                 dissim: DissimilarityFn, lam: float):
    """Inactive neighbors of ``p`` and their conditional log-probabilities."""
    nbrs = graph.adjacency[p]
    inactive = nbrs[xi.bits[nbrs] == 0]
    states = [xi.swap(p, int(q)) for q in inactive]
    d = np.array([dissim(problem, s) for s in states], dtype=float)
    w = np.power(-np.minimum(d, 0.0), lam)
    if not np.all(np.isfinite(w)):
        raise ProposalError(f"non-finite swap weight around predictor {p}")
    return inactive, states, w - logsumexp(w)


def build_swap_proposal(problem, xi: InclusionVector, graph: DependencyGraph,
                        dissim: DissimilarityFn, lambda_move: float) -> SwapProposal:
    """Uniform choice of ``p`` in A(xi), then data-weighted choice of the partner."""
    A = active_swappable_set(xi, graph)
    if not A:
        raise ValueError("no swappable active predictor; the swap move is skipped")
    cands, logs = [], []
    la = -math.log(len(A))
    for p in A:
        inactive, states, lq = _conditional(problem, xi, p, graph, dissim, lambda_move)
        for q, s, l in zip(inactive, states, lq):
            cands.append(SwapCandidate(p, int(q), s))
            logs.append(la + l)
    return SwapProposal(xi, tuple(cands), np.array(logs))


def swap_log_prob(problem, xi: InclusionVector, p: int, q: int, graph: DependencyGraph,
                  dissim: DissimilarityFn, lambda_move: float) -> float:
    """``log Q_move(xi^(p,q) | xi)``."""
    A = active_swappable_set(xi, graph)
    if p not in A:
        return -math.inf
    inactive, _, lq = _conditional(problem, xi, p, graph, dissim, lambda_move)
    hit = np.flatnonzero(inactive == q)
    if hit.size == 0:
        return -math.inf
    return -math.log(len(A)) + float(lq[hit[0]])


def sample_swap(problem, xi: InclusionVector, graph: DependencyGraph, dissim: DissimilarityFn,
                lambda_move: float, rng: np.random.Generator):
    """Draw a swap; returns ``(candidate, log_forward)`` or ``None`` if A(xi) is empty."""
    A = active_swappable_set(xi, graph)
    if not A:
        return None
    p = A[int(rng.integers(len(A)))]
    inactive, states, lq = _conditional(problem, xi, p, graph, dissim, lambda_move)
    cdf = np.cumsum(np.exp(lq))
    i = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
    cand = SwapCandidate(p, int(inactive[i]), states[i])
    return cand, -math.log(len(A)) + float(lq[i])


def mh_accept_swap(problem, xi: InclusionVector, candidate: SwapCandidate,
                   graph: DependencyGraph, dissim: DissimilarityFn, lambda_move: float,
                   rng: np.random.Generator, log_forward: float | None = None) -> MoveResult:
    """MH step for a swap; the reverse move re-selects the activated predictor and swaps back."""
    u = rng.random()
    p, q, new = candidate.deactivate, candidate.activate, candidate.state
    try:
        if log_forward is None:
            log_forward = swap_log_prob(problem, xi, p, q, graph, dissim, lambda_move)
        log_reverse = swap_log_prob(problem, new, q, p, graph, dissim, lambda_move)
        assert log_reverse > -math.inf, "reverse swap must exist for a symmetric graph"
        lp_new = problem.log_posterior(new)
        if lp_new == -math.inf:
            return MoveResult(False, xi, -math.inf)
        log_alpha = lp_new - problem.log_posterior(xi) + log_reverse - log_forward
    except (EvaluationError, ProposalError, np.linalg.LinAlgError) as exc:
        log.warning("swap %d->%d rejected: %s", p, q, exc)
        return MoveResult(False, xi, -math.inf)
    accepted = u < math.exp(min(0.0, log_alpha))
    return MoveResult(bool(accepted), new if accepted else xi, float(log_alpha))


def swap_kernel_matrix(problem, graph: DependencyGraph, dissim: DissimilarityFn,
                       lambda_move: float):
    """Exact transition matrix of the swap kernel (states with empty A(xi) stay put)."""
    P = problem.P
    states = [InclusionVector([(m >> p) & 1 for p in range(P)]) for m in range(2 ** P)]
    index = {s.key: i for i, s in enumerate(states)}
    T = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        if not active_swappable_set(s, graph):
            T[i, i] = 1.0
            continue
        prop = build_swap_proposal(problem, s, graph, dissim, lambda_move)
        stay = 0.0
        for c, lq in zip(prop.candidates, prop.log_probabilities):
            lr = swap_log_prob(problem, c.state, c.activate, c.deactivate, graph, dissim,
                               lambda_move)
            la = problem.log_posterior(c.state) - problem.log_posterior(s) + lr - lq
            a = math.exp(min(0.0, la))
            T[i, index[c.state.key]] = math.exp(lq) * a
            stay += math.exp(lq) * (1.0 - a)
        T[i, i] = stay
    return states, T
