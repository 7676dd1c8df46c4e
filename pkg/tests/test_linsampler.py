import math

import numpy as np
import pytest
from scipy import stats

from simmh.adapt import AdaptConfig
from simmh.conjlinear import InclusionVector, LinearProblem
from simmh.linsampler import ChainTrace, SamplerConfig, hamming, lambda_sweep, run_chain
from simmh.numcore import DomainError
from simmh.synthgen import LinearSynthConfig, gen_linear

from conftest import linear_problem


def test_hamming_examples_and_naive_loop():
    a = InclusionVector([1, 0, 1])
    assert hamming(a, a) == 0 and hamming(a, a.flip(1)) == 1
    g = np.random.default_rng(0)
    for _ in range(1000):
        P = int(g.integers(1, 40))
        x, y = g.integers(0, 2, P), g.integers(0, 2, P)
        ref = 0
        for i in range(P):
            if x[i] != y[i]:
                ref += 1
        assert hamming(InclusionVector(x), InclusionVector(y)) == ref
    with pytest.raises(DomainError):
        hamming(a, InclusionVector([1, 0]))


class _StuckProblem(LinearProblem):
    """Test double: all mass on the empty model."""

    def log_posterior(self, xi):
        return 0.0 if xi.popcount == 0 else -math.inf


def test_forced_reject_keeps_initial_state():
    base = linear_problem(seed=1, P=3)
    prob = _StuckProblem(base.X, base.y)
    tr = run_chain(prob, SamplerConfig(T=1, burn_in=0))
    assert tr.configs.tolist() == [[0, 0, 0], [0, 0, 0]]
    assert tr.d_h.tolist() == [0] and tr.flip_acc.tolist() == [0]


def test_config_validation():
    for bad in (dict(T=0), dict(T=10, burn_in=10), dict(lam=0.0), dict(dissim="KL"),
                dict(lambda_move=-1.0)):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)


def test_identical_seeds_give_identical_traces(tmp_path):
    prob = linear_problem(seed=2, P=6)
    cfg = SamplerConfig(T=500, burn_in=100, seed=9, swap=True)
    a, b = run_chain(prob, cfg), run_chain(prob, cfg)
    for name, tr in (("a", a), ("b", b)):
        (tmp_path / name).mkdir()
        tr.write(tmp_path / name)
    for f in ("trace.csv", "trace_configs.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    c = run_chain(prob, SamplerConfig(T=500, burn_in=100, seed=10, swap=True))
    assert not np.array_equal(a.configs, c.configs)


def test_trace_bookkeeping_recomputes():
    prob = linear_problem(seed=3, P=6, n=40)
    tr = run_chain(prob, SamplerConfig(T=2000, burn_in=500, seed=1))
    moved = np.any(tr.configs[1:] != tr.configs[:-1], axis=1)
    np.testing.assert_array_equal(moved, tr.flip_acc.astype(bool))
    np.testing.assert_array_equal(tr.d_h, np.count_nonzero(tr.configs[1:] != tr.configs[:-1], 1))
    assert tr.flip_acceptance_rate() == moved[500:].mean()
    for t in (0, 700, 1999):
        assert tr.log_post[t] == prob.log_posterior(InclusionVector(tr.configs[t + 1]))
    assert tr.d_h.max() <= 1 and np.all(tr.swap_acc == -1)


def test_swap_chain_bookkeeping():
    prob, _ = gen_linear(LinearSynthConfig(n=100, P=40, n_active=5, rho=0.9, seed=1))
    tr = run_chain(prob, SamplerConfig(T=1500, burn_in=0, seed=2, swap=True))
    diff = np.count_nonzero(tr.configs[1:] != tr.configs[:-1], axis=1)
    np.testing.assert_array_equal(diff, tr.d_h)
    assert tr.d_h.max() <= 3
    assert np.isin(tr.d_h, [2, 3]).any()
    pops = tr.configs.sum(axis=1, dtype=np.int64)
    # a swap never changes model size, so size moves by at most one per iteration
    assert np.abs(np.diff(pops)).max() <= 1


def test_trace_roundtrip(tmp_path):
    prob = linear_problem(seed=4, P=5)
    tr = run_chain(prob, SamplerConfig(T=300, burn_in=50, seed=3, swap=True))
    tr.write(tmp_path)
    back = ChainTrace.read(tmp_path, burn_in=50)
    np.testing.assert_array_equal(back.configs, tr.configs)
    np.testing.assert_array_equal(back.flip_acc, tr.flip_acc)
    np.testing.assert_array_equal(back.swap_acc, tr.swap_acc)
    np.testing.assert_array_equal(back.lam, tr.lam)
    np.testing.assert_array_equal(back.log_post, tr.log_post)


def test_stationarity_chi_square():
    # thinned so that successive kept states are close to independent
    prob = linear_problem(seed=5, n=30, P=4, n_active=2, noise=1.5)
    _, pi = prob.enumerate_posterior()
    thin = 10
    tr = run_chain(prob, SamplerConfig(T=1000 + 100_000 * thin, burn_in=1000, seed=4))
    s = tr.samples()[thin - 1::thin]
    codes = (s.astype(np.int64) << np.arange(4)).sum(axis=1)
    obs = np.bincount(codes, minlength=16)
    exp = pi * obs.sum()
    keep = exp >= 5
    obs_k = np.append(obs[keep], obs[~keep].sum())
    exp_k = np.append(exp[keep], exp[~keep].sum())
    if exp_k[-1] == 0:
        obs_k, exp_k = obs_k[:-1], exp_k[:-1]
    p = stats.chisquare(obs_k, exp_k).pvalue
    assert p > 0.001


def test_adaptive_lambda_bounded_and_frozen():
    prob = linear_problem(seed=6, P=8, n=50, n_active=3)
    cfg = SamplerConfig(T=4000, burn_in=1000, seed=5,
                        adapt=AdaptConfig(window=25, c=5.0, t_start=100, t_end=3000))
    tr = run_chain(prob, cfg)
    assert np.all((tr.lam >= 0.05) & (tr.lam <= 10.0))
    assert np.unique(tr.lam[3000:]).size == 1
    assert tr.meta["adapt_epochs"] == (3000 - 100) // 25


def test_lambda_sweep_rates():
    prob = linear_problem(seed=7, P=5)
    r = lambda_sweep(prob, [0.5], 300, 100)
    assert r.shape == (1,) and 0 <= r[0] <= 1
    rates, traces = lambda_sweep(prob, [0.1, 1.0, 2.0], 400, 100, seed=3, return_traces=True)
    for rate, tr in zip(rates, traces):
        assert rate == tr.flip_acc[100:].mean()
    with pytest.raises(ValueError):
        lambda_sweep(prob, [0.0], 10, 1)
