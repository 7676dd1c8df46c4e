import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simmh.conjlinear import EvaluationError, InclusionVector, f_dissimilarity, lr_dissimilarity
from simmh.proposal import (ProposalError, build_proposal, flip_kernel_matrix, flip_log_alpha,
                            mh_accept_flip, sample_proposal, similarity_weight,
                            single_flip_neighborhood)

from conftest import linear_problem


def _all_states(P):
    return [InclusionVector([(m >> p) & 1 for p in range(P)]) for m in range(2 ** P)]


def const_dissim(value):
    return lambda problem, xi: value


def by_index_dissim(problem, xi):
    """d = -(k + 1) for the single-active vector with bit k, 0 otherwise."""
    return -float(xi.active()[0] + 1) if xi.popcount == 1 else 0.0


# -- neighborhoods -------------------------------------------------------------

def test_neighborhood_examples():
    nb = single_flip_neighborhood(InclusionVector([0, 0]))
    assert [list(m.bits) for m in nb.members] == [[1, 0], [0, 1]]
    nb = single_flip_neighborhood(InclusionVector([1, 1, 1]))
    assert [list(m.bits) for m in nb.members] == [[0, 1, 1], [1, 0, 1], [1, 1, 0]]
    assert all(m.popcount == 2 for m in nb.members)


def test_neighborhood_symmetry_exhaustive():
    states = _all_states(6)
    nbs = {s.key: {m.key for m in single_flip_neighborhood(s).members} for s in states}
    for a in states:
        for b in states:
            assert (b.key in nbs[a.key]) == (a.key in nbs[b.key])


# -- weights and proposal ------------------------------------------------------

def test_similarity_weight_examples():
    assert similarity_weight(0.0, 3.3) == 0.0
    assert similarity_weight(-4.0, 0.5) == pytest.approx(2.0)
    assert abs(similarity_weight(-1.5, 1e-8) - similarity_weight(-250.0, 1e-8)) < 1e-6


def test_identical_dissimilarities_give_uniform_proposal():
    prob = linear_problem(seed=1, P=5)
    q = build_proposal(prob, InclusionVector.zeros(5), const_dissim(-2.5), 1.3)
    np.testing.assert_allclose(q.probabilities, np.full(5, 0.2), rtol=1e-14)


def test_softmax_example():
    prob = linear_problem(seed=1, P=3)
    q = build_proposal(prob, InclusionVector.zeros(3), by_index_dissim, 1.0)
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(q.probabilities, e / e.sum(), rtol=1e-14)
    assert q.probabilities.sum() == pytest.approx(1.0, abs=1e-15)


def test_proposal_matches_extended_precision():
    prob = linear_problem(seed=2, n=40, P=8, n_active=3)
    xi = InclusionVector([1, 0, 0, 1, 0, 0, 0, 0])
    for lam in (0.3, 0.7, 2.0):
        q = build_proposal(prob, xi, f_dissimilarity, lam)
        mp.mp.dps = 40
        w = [mp.power(-mp.mpf(d), lam) if d < 0 else mp.mpf(0) for d in q.dissimilarities]
        z = mp.fsum(mp.exp(v) for v in w)
        ref = [float(mp.exp(v) / z) for v in w]
        np.testing.assert_allclose(q.probabilities, ref, rtol=0, atol=1e-12)


def test_non_finite_weight_names_member():
    prob = linear_problem(seed=1, P=3)
    with pytest.raises(ProposalError, match="InclusionVector"):
        build_proposal(prob, InclusionVector.zeros(3), const_dissim(-math.inf), 1.0)
    with pytest.raises(ValueError):
        build_proposal(prob, InclusionVector.zeros(3), const_dissim(-1.0), 0.0)


def test_log_prob_outside_neighborhood_is_minus_inf():
    prob = linear_problem(seed=1, P=3)
    q = build_proposal(prob, InclusionVector.zeros(3), f_dissimilarity, 0.7)
    assert q.log_prob(InclusionVector([1, 1, 0])) == -math.inf


@given(st.integers(0, 5000), st.floats(0.05, 5.0), st.floats(0.05, 5.0))
def test_monotone_concentration(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    prob = linear_problem(seed=seed, n=20, P=5)
    xi = InclusionVector(np.random.default_rng(seed).integers(0, 2, 5))
    a = build_proposal(prob, xi, lr_dissimilarity, lo)
    b = build_proposal(prob, xi, lr_dissimilarity, hi)
    d = a.dissimilarities
    # d log q_i / d lambda = f(-d_i) - E_q f(-d) with f(x) = x^lambda log x, which is
    # nonnegative for the argmin member once -min(d) >= 1; below that it can fail
    if np.unique(d).size < d.size or -d.min() < 1.0:
        return
    i = int(np.argmin(d))
    assert b.probabilities[i] >= a.probabilities[i] - 1e-12


def test_concentration_can_reverse_when_all_weights_are_below_one():
    prob = linear_problem(seed=1, P=2)
    d = lambda problem, xi: -0.8 if xi.bits[0] else -0.1
    lo = build_proposal(prob, InclusionVector.zeros(2), d, 1.0).probabilities[0]
    hi = build_proposal(prob, InclusionVector.zeros(2), d, 3.0).probabilities[0]
    assert lo == pytest.approx(math.exp(0.8) / (math.exp(0.8) + math.exp(0.1)), abs=1e-14)
    assert hi == pytest.approx(math.exp(0.512) / (math.exp(0.512) + math.exp(0.001)), abs=1e-14)
    assert hi < lo


# -- sampling ------------------------------------------------------------------

def test_deterministic_proposal_returns_its_member():
    prob = linear_problem(seed=1, P=3)
    q = build_proposal(prob, InclusionVector.zeros(3), by_index_dissim, 10.0)
    g = np.random.default_rng(0)
    for _ in range(50):
        cand, lq = sample_proposal(q, g)
        assert list(cand.bits) == [0, 0, 1]


def test_uniform_sampling_frequencies():
    P = 6
    prob = linear_problem(seed=1, P=P)
    q = build_proposal(prob, InclusionVector.zeros(P), const_dissim(-1.0), 1.0)
    g = np.random.default_rng(11)
    N = 100_000
    counts = np.zeros(P)
    for _ in range(N):
        cand, lq = sample_proposal(q, g)
        k = int(cand.active()[0])
        counts[k] += 1
        assert lq == q.log_probabilities[k]
    sd = math.sqrt(N * (1 / P) * (1 - 1 / P))
    assert np.all(np.abs(counts - N / P) <= 3 * sd)


# -- acceptance ----------------------------------------------------------------

def test_constant_dissimilarity_reduces_to_posterior_ratio():
    prob = linear_problem(seed=3, P=4)
    d = const_dissim(-1.7)
    xi = InclusionVector([1, 0, 0, 1])
    cand = xi.flip(2)
    la = flip_log_alpha(prob, xi, cand, build_proposal(prob, xi, d, 0.9),
                        build_proposal(prob, cand, d, 0.9))
    assert la == pytest.approx(prob.log_posterior(cand) - prob.log_posterior(xi), abs=1e-12)


def test_much_better_candidate_is_accepted():
    prob = linear_problem(seed=4, n=80, P=3, n_active=1, noise=0.1)
    xi = InclusionVector.zeros(3)
    cand = xi.flip(0)
    assert prob.log_posterior(cand) - prob.log_posterior(xi) > 20
    for s in range(20):
        res = mh_accept_flip(prob, xi, cand, const_dissim(-1.0), 1.0, np.random.default_rng(s))
        assert res.accepted and res.state == cand


def test_evaluation_failure_rejects_move(caplog):
    prob = linear_problem(seed=1, P=3)

    def failing(problem, xi):
        if xi.popcount == 2:
            raise EvaluationError("boom")
        return -1.0

    xi = InclusionVector([1, 0, 0])
    res = mh_accept_flip(prob, xi, xi.flip(1), failing, 1.0, np.random.default_rng(0))
    assert not res.accepted and res.state == xi and res.log_alpha == -math.inf
    assert "rejected" in caplog.text


def _kernel_oracle(prob, dissim, lam):
    """Transition matrix rebuilt in 40-digit arithmetic from dissimilarities."""
    mp.mp.dps = 40
    P = prob.P
    states = _all_states(P)
    lp = [mp.mpf(prob.log_posterior(s)) for s in states]
    logq = {}
    for i, s in enumerate(states):
        w = []
        for p in range(P):
            d = mp.mpf(dissim(prob, s.flip(p)))
            w.append(mp.power(-d, lam) if d < 0 else mp.mpf(0))
        lz = mp.log(mp.fsum(mp.exp(v) for v in w))
        for p in range(P):
            logq[i, i ^ (1 << p)] = w[p] - lz
    T = mp.zeros(2 ** P, 2 ** P)
    for (i, j), lq in logq.items():
        la = lp[j] - lp[i] + logq[j, i] - lq
        T[i, j] = mp.exp(lq) * min(mp.mpf(1), mp.exp(la))
    for i in range(2 ** P):
        T[i, i] = 1 - mp.fsum(T[i, j] for j in range(2 ** P) if j != i)
    return np.array(T.tolist(), dtype=float)


@pytest.mark.parametrize("kind", ["F", "LR"])
def test_flip_kernel_matches_extended_precision(kind):
    dissim = f_dissimilarity if kind == "F" else lr_dissimilarity
    prob = linear_problem(seed=5, n=25, P=4)
    states, T = flip_kernel_matrix(prob, dissim, 0.7)
    np.testing.assert_allclose(T, _kernel_oracle(prob, dissim, 0.7), rtol=0, atol=1e-12)


@pytest.mark.parametrize("lam", [0.05, 0.7, 3.0])
def test_flip_kernel_detailed_balance(lam):
    prob = linear_problem(seed=6, n=25, P=4)
    states, T = flip_kernel_matrix(prob, f_dissimilarity, lam)
    _, pi = prob.enumerate_posterior()
    flow = pi[:, None] * T
    assert np.abs(flow - flow.T).max() <= 1e-12
    assert np.abs(pi @ T - pi).max() <= 1e-12
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(T >= 0)
