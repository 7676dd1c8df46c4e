"""Similarity-driven single-flip proposals and their MH correction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .conjlinear import DissimilarityFn, EvaluationError, InclusionVector, LinearProblem

__all__ = [
    "Neighborhood",
    "SimilarityProposal",
    "ProposalError",
    "MoveResult",
    "single_flip_neighborhood",
    "similarity_weight",
    "build_proposal",
    "sample_proposal",
    "flip_log_alpha",
    "mh_accept_flip",
    "flip_kernel_matrix",
]

log = logging.getLogger(__name__)


class ProposalError(ValueError):
    """A proposal could not be constructed (non-finite weight)."""


@dataclass(frozen=True)
class Neighborhood:
    origin: InclusionVector
    members: tuple[InclusionVector, ...]

    def __len__(self):
        return len(self.members)

    def index(self, candidate: InclusionVector) -> int:
        for i, m in enumerate(self.members):
            if m.key == candidate.key:
                return i
        raise KeyError(f"{candidate!r} is not in the neighborhood of {self.origin!r}")


def single_flip_neighborhood(xi: InclusionVector) -> Neighborhood:
    """All configurations one flip away, ordered by flipped index."""
    P = len(xi)
    B = np.repeat(xi.bits[None, :], P, axis=0)
    ar = np.arange(P)
    B[ar, ar] ^= 1
    pop = xi.popcount
    members = tuple(
        InclusionVector._trusted(B[i], pop + (1 if B[i, i] else -1)) for i in range(P)
    )
    return Neighborhood(xi, members)


def similarity_weight(d: float, lam: float) -> float:
    """Log of the similarity weight, ``(-d) ** lam``."""
    return (-d) ** lam if d < 0 else 0.0


@dataclass(frozen=True)
class SimilarityProposal:
    neighborhood: Neighborhood
    lam: float
    dissimilarities: np.ndarray
    log_weights: np.ndarray
    log_normalizer: float
    log_probabilities: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities)

    def log_prob(self, candidate: InclusionVector) -> float:
        """``log Q(candidate | origin)``; ``-inf`` outside the neighborhood."""
        try:
            return float(self.log_probabilities[self.neighborhood.index(candidate)])
        except KeyError:
            return -math.inf


def build_proposal(problem: LinearProblem, xi: InclusionVector, dissim: DissimilarityFn,
                   lam: float, neighborhood: Neighborhood | None = None) -> SimilarityProposal:
    """Similarity-weighted categorical proposal over a neighborhood (uniform base kernel)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    nb = neighborhood if neighborhood is not None else single_flip_neighborhood(xi)
    d = np.fromiter((dissim(problem, m) for m in nb.members), dtype=float, count=len(nb))
    if np.any(d > 0):
        d = np.minimum(d, 0.0)
    w = np.power(-d, lam)
    bad = np.flatnonzero(~np.isfinite(w))
    if bad.size:
        raise ProposalError(f"non-finite weight for neighbor {nb.members[bad[0]]!r}")
    lse = float(logsumexp(w))
    return SimilarityProposal(nb, float(lam), d, w, lse, w - lse)


def sample_proposal(proposal: SimilarityProposal,
                    rng: np.random.Generator) -> tuple[InclusionVector, float]:
    """Inverse-CDF draw; returns the candidate and ``log Q(candidate | origin)``."""
    cdf = np.cumsum(proposal.probabilities)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(cdf) - 1)
    # skip zero-mass tail entries reached only through rounding in cdf[-1]
    while proposal.log_probabilities[idx] == -math.inf and idx > 0:
        idx -= 1
    return proposal.neighborhood.members[idx], float(proposal.log_probabilities[idx])


class MoveResult(NamedTuple):
    accepted: bool
    state: InclusionVector
    log_alpha: float
    reverse: object = None


def flip_log_alpha(problem, xi: InclusionVector, candidate: InclusionVector,
                   forward: SimilarityProposal, reverse: SimilarityProposal) -> float:
    """MH log acceptance ratio for a similarity-driven flip.

    Equals the log posterior ratio plus ``w(xi) - w(xi')`` plus
    ``log Z(xi) - log Z(xi')``; written through the two proposal
    log-probabilities, which carry exactly those terms.
    """
    lp_new = problem.log_posterior(candidate)
    lp_old = problem.log_posterior(xi)
    if lp_new == -math.inf:
        return -math.inf
    return (lp_new - lp_old) + reverse.log_prob(xi) - forward.log_prob(candidate)


def mh_accept_flip(problem, xi: InclusionVector, candidate: InclusionVector,
                   dissim: DissimilarityFn, lam: float, rng: np.random.Generator,
                   forward: SimilarityProposal | None = None,
                   reverse: SimilarityProposal | None = None) -> MoveResult:
    """Accept or reject ``candidate``; evaluation failures reject the move.

    One uniform is consumed per call regardless of the outcome.
    """
    u = rng.random()
    try:
        if forward is None:
            forward = build_proposal(problem, xi, dissim, lam)
        if reverse is None:
            reverse = build_proposal(problem, candidate, dissim, lam)
        log_alpha = flip_log_alpha(problem, xi, candidate, forward, reverse)
    except (EvaluationError, ProposalError, np.linalg.LinAlgError) as exc:
        log.warning("flip %r -> %r rejected: %s", xi, candidate, exc)
        return MoveResult(False, xi, -math.inf, None)
    accepted = u < math.exp(min(0.0, log_alpha)) if log_alpha > -math.inf else False
    return MoveResult(bool(accepted), candidate if accepted else xi, float(log_alpha), reverse)


def flip_kernel_matrix(problem, dissim: DissimilarityFn, lam: float):
    """Exact transition matrix of the flip kernel on all 2^P states (small P)."""
    P = problem.P
    states = [InclusionVector([(m >> p) & 1 for p in range(P)]) for m in range(2 ** P)]
    index = {s.key: i for i, s in enumerate(states)}
    props = {s.key: build_proposal(problem, s, dissim, lam) for s in states}
    T = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        fwd = props[s.key]
        stay = 0.0
        for m, lq in zip(fwd.neighborhood.members, fwd.log_probabilities):
            la = flip_log_alpha(problem, s, m, fwd, props[m.key])
            a = math.exp(min(0.0, la))
            T[i, index[m.key]] = math.exp(lq) * a
            stay += math.exp(lq) * (1.0 - a)
        # rejection mass summed directly, so it cannot round below zero
        T[i, i] = stay
    return states, T
