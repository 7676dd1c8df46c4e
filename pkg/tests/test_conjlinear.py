import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from simmh import numcore
from simmh.conjlinear import (DegreesOfFreedomError, InclusionVector, LinearProblem, ModelPrior,
                              NIGPrior, f_dissimilarity, get_dissimilarity, log_model_prior,
                              lr_dissimilarity)

from conftest import linear_problem


def nig_quadrature_lml(y, lam0=1.0, a0=1.0, b0=1.0):
    """log of the double integral over (beta0, sigma^2) for the intercept-only model."""
    y = np.asarray(y, dtype=float)
    n = len(y)

    def joint(b, u):
        s2 = math.exp(u)  # integrate over log sigma^2
        lik = (2 * math.pi * s2) ** (-n / 2) * math.exp(-((y - b) ** 2).sum() / (2 * s2))
        pri = math.sqrt(lam0 / (2 * math.pi * s2)) * math.exp(-lam0 * b * b / (2 * s2))
        ig = b0 ** a0 / math.gamma(a0) * s2 ** (-a0 - 1) * math.exp(-b0 / s2)
        return lik * pri * ig * s2

    val, _ = integrate.dblquad(joint, -40.0, 15.0, -np.inf, np.inf, epsabs=0, epsrel=1e-11)
    return math.log(val)


@pytest.mark.parametrize("y", [(0.0, 0.0, 0.0), (0.3, -1.2, 0.8)])
def test_lml_matches_two_dimensional_quadrature(y):
    X = np.array([[0.1], [0.5], [-0.6]])
    prob = LinearProblem(X, np.array(y), NIGPrior(np.zeros(2), np.eye(2), 1.0, 1.0))
    ref = nig_quadrature_lml(y)
    assert prob.log_marginal_likelihood(InclusionVector.zeros(1)) == pytest.approx(ref, rel=1e-6)


def _random_prior(g, P):
    A = g.standard_normal((P + 1, P + 1))
    lam0 = A @ A.T / (P + 1) + 0.5 * np.eye(P + 1)
    return NIGPrior(g.standard_normal(P + 1), 0.5 * (lam0 + lam0.T), g.uniform(0.5, 3),
                    g.uniform(0.5, 3))


@pytest.mark.parametrize("seed", range(20))
def test_lml_equals_multivariate_t_density(seed):
    g = np.random.default_rng(seed)
    n, P = 9, 4
    X = g.standard_normal((n, P))
    y = g.standard_normal(n) * 2
    prior = _random_prior(g, P)
    prob = LinearProblem(X, y, prior)
    xi = InclusionVector(g.integers(0, 2, P))
    idx = np.concatenate(([0], xi.active() + 1))
    Z = np.column_stack([np.ones(n), X])[:, idx]
    cov0 = np.linalg.inv(prior.lambda0[np.ix_(idx, idx)])
    shape = prior.b0 / prior.a0 * (np.eye(n) + Z @ cov0 @ Z.T)
    ref = stats.multivariate_t.logpdf(y, Z @ prior.mu0[idx], shape, df=2 * prior.a0)
    assert prob.log_marginal_likelihood(xi) == pytest.approx(ref, abs=1e-8)


def test_duplicated_predictors_give_identical_values():
    g = np.random.default_rng(1)
    x = g.standard_normal(15)
    X = np.column_stack([x, x, g.standard_normal(15)])
    prob = LinearProblem(X, x + g.standard_normal(15))
    a = InclusionVector([1, 0, 1])
    b = InclusionVector([0, 1, 1])
    assert prob.log_marginal_likelihood(a) == prob.log_marginal_likelihood(b)


def test_lml_exchangeable_under_column_permutation():
    prob = linear_problem(seed=3, P=5)
    perm = np.array([3, 0, 4, 1, 2])
    permuted = LinearProblem(prob.X[:, perm], prob.y)
    for m in range(32):
        bits = np.array([(m >> p) & 1 for p in range(5)])
        a = prob.log_marginal_likelihood(InclusionVector(bits))
        b = permuted.log_marginal_likelihood(InclusionVector(bits[perm]))
        assert b == pytest.approx(a, abs=1e-10)


def test_enumerated_posterior_is_probability_vector():
    prob = linear_problem(seed=4, P=6)
    states, w = prob.enumerate_posterior()
    assert len(states) == 64
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)


def test_cache_transparency():
    a = linear_problem(seed=5, P=5)
    b = LinearProblem(a.X, a.y, cache=False)
    for m in range(32):
        xi = InclusionVector([(m >> p) & 1 for p in range(5)])
        for _ in range(2):
            assert a.log_posterior(xi) == b.log_posterior(xi)
            assert f_dissimilarity(a, xi) == f_dissimilarity(b, xi)
            assert lr_dissimilarity(a, xi) == lr_dissimilarity(b, xi)
    assert len(a.stat_cache) == 32 and not b.stat_cache


# -- model prior -------------------------------------------------------------

def test_model_prior_examples():
    assert math.exp(log_model_prior(ModelPrior(1, 1), InclusionVector([1]))) == pytest.approx(0.5)
    tot = sum(math.exp(log_model_prior(ModelPrior(1, 1), InclusionVector(b)))
              for b in ([0, 0], [1, 0], [0, 1], [1, 1]))
    assert tot == pytest.approx(1.0, abs=1e-14)
    mp_ = ModelPrior(1.0, 9.0)
    zero = log_model_prior(mp_, InclusionVector.zeros(10))
    one = log_model_prior(mp_, InclusionVector.from_indices(10, [4]))
    lg = numcore.log_gamma
    # B(2, 18) / B(1, 19) by direct log-gamma arithmetic
    ref = (lg(2) + lg(18) - lg(20)) - (lg(1) + lg(19) - lg(20))
    assert one - zero == pytest.approx(ref, abs=1e-12)


def test_prior_validation():
    with pytest.raises(ValueError):
        ModelPrior(0.0, 1.0)
    with pytest.raises(ValueError):
        NIGPrior(np.zeros(2), np.eye(2), -1.0, 1.0)
    with pytest.raises(numcore.FactorizationError):
        NIGPrior(np.zeros(2), -np.eye(2), 1.0, 1.0)
    with pytest.raises(ValueError):
        NIGPrior(np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]), 1.0, 1.0)


# -- dissimilarities -----------------------------------------------------------

def test_null_configuration_has_zero_dissimilarity():
    prob = linear_problem(seed=6)
    for kind in ("F", "LR"):
        assert get_dissimilarity(kind)(prob, InclusionVector.zeros(prob.P)) == 0.0


def test_f_dissimilarity_hand_instance():
    X = np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]])
    y = np.array([1.1, 1.9, 3.2, 3.9, 5.3, 5.8])
    prob = LinearProblem(X, y)
    rss0 = float(((y - y.mean()) ** 2).sum())
    slope, icpt = np.polyfit(X[:, 0], y, 1)
    rss1 = float(((y - icpt - slope * X[:, 0]) ** 2).sum())
    F = (rss0 - rss1) / 1 / (rss1 / 4)
    ref = math.log10(max(special.fdtrc(1, 4, F), 1e-300))
    assert f_dissimilarity(prob, InclusionVector([1])) == pytest.approx(ref, abs=1e-10)


def test_lr_dissimilarity_uses_profile_likelihood_ratio():
    prob = linear_problem(seed=7, n=25, P=3)
    xi = InclusionVector([1, 0, 1])
    stat = prob.n * math.log(prob.rss0 / prob.rss(xi))
    # profile log-likelihoods written out in full
    l0 = -prob.n / 2 * (math.log(2 * math.pi * prob.rss0 / prob.n) + 1)
    l1 = -prob.n / 2 * (math.log(2 * math.pi * prob.rss(xi) / prob.n) + 1)
    assert -2 * (l0 - l1) == pytest.approx(stat, rel=1e-12)
    ref = math.log10(special.gammaincc(1.0, stat / 2))
    assert lr_dissimilarity(prob, xi) == pytest.approx(ref, abs=1e-10)


def test_pure_noise_f_pvalues_are_uniform():
    g = np.random.default_rng(2024)
    pv = []
    for _ in range(1000):
        X = g.standard_normal((200, 1))
        prob = LinearProblem(X, g.standard_normal(200))
        pv.append(10 ** f_dissimilarity(prob, InclusionVector([1])))
    assert stats.kstest(pv, "uniform").pvalue > 0.01


def test_adding_a_predictor_never_decreases_lr_statistic():
    g = np.random.default_rng(8)
    for _ in range(100):
        prob = linear_problem(seed=int(g.integers(1 << 30)), n=20, P=5)
        bits = g.integers(0, 2, 5)
        inactive = np.flatnonzero(bits == 0)
        if inactive.size == 0:
            continue
        small = InclusionVector(bits)
        big = small.flip(int(g.choice(inactive)))
        lam_small = prob.n * math.log(prob.rss0 / prob.rss(small))
        lam_big = prob.n * math.log(prob.rss0 / prob.rss(big))
        assert lam_big >= lam_small - 1e-9


def test_degrees_of_freedom_error():
    prob = linear_problem(seed=9, n=4, P=3)
    with pytest.raises(DegreesOfFreedomError):
        f_dissimilarity(prob, InclusionVector([1, 1, 1]))


@given(st.integers(0, 10_000), st.sampled_from(["F", "LR"]))
def test_dissimilarities_are_nonpositive(seed, kind):
    prob = linear_problem(seed=seed, n=15, P=4)
    g = np.random.default_rng(seed)
    d = get_dissimilarity(kind)(prob, InclusionVector(g.integers(0, 2, 4)))
    assert -300.0 <= d <= 0.0


def test_inclusion_vector_invariants():
    xi = InclusionVector([0, 1, 1, 0])
    assert xi.popcount == 2 and list(xi.active()) == [1, 2]
    assert xi.flip(0).popcount == 3 and xi.swap(1, 3).popcount == 2
    assert InclusionVector.from_key(xi.key) == xi
    with pytest.raises(ValueError):
        InclusionVector([0, 2])
    with pytest.raises(ValueError):
        LinearProblem(np.zeros((3, 2)), np.zeros(4))
