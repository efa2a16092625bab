import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import PM_FIXTURES, LinearBanditTasks, play_linear_bandit, probability_matching_gap
from metats.bandit import (
    init_agent,
    instant_regret,
    select_waveform,
    uninformative_prior,
    update_agent,
)
from metats.gaussian import DimensionMismatch, Gaussian


def test_init_agent_zero_mean():
    a = init_agent(Gaussian.isotropic(np.zeros(2), 0.25), 1.0)
    np.testing.assert_array_equal(a.posterior.mean, 0.0)
    np.testing.assert_allclose(a.posterior.precision, 4 * np.eye(2))
    assert a.prior_used.dim == 2


def test_uninformative_prior_variance():
    p = uninformative_prior(3, 4.0)
    np.testing.assert_allclose(p.covariance, 400 * np.eye(3))


class TestSelect:
    def test_concentrated_posterior(self, rng):
        a = init_agent(Gaussian([1.0, 0.0], 1e12 * np.eye(2)), 1.0)
        assert select_waveform(a, [[1.0, 0.0], [-1.0, 0.0]], rng) == 1

    def test_identical_features_uniform(self, rng):
        a = init_agent(Gaussian(np.zeros(2), np.eye(2)), 1.0)
        ctx = np.tile([0.3, -0.4], (4, 1))
        # identical rows tie exactly, and the lowest index wins
        picks = [select_waveform(a, ctx, rng) for _ in range(100)]
        assert set(picks) == {0}

    def test_identical_arms_in_law(self, rng):
        # arms that are exchangeable under the posterior are picked uniformly
        K = 4
        a = init_agent(Gaussian(np.zeros(K), np.eye(K)), 1.0)
        ctx = np.eye(K)
        freq = np.bincount([select_waveform(a, ctx, rng) for _ in range(10_000)], minlength=K) / 10_000
        assert np.all(np.abs(freq - 1 / K) <= 0.03)

    def test_sign_symmetry(self, rng):
        a = init_agent(Gaussian([0.0], [[1.0]]), 1.0)
        picks = np.array([select_waveform(a, [[1.0], [-1.0]], rng) for _ in range(10_000)])
        assert abs(picks.mean() - 0.5) <= 0.02

    def test_dimension_mismatch(self, rng):
        a = init_agent(Gaussian(np.zeros(2), np.eye(2)), 1.0)
        with pytest.raises(DimensionMismatch):
            select_waveform(a, [[1.0, 0.0, 0.0]], rng)

    @pytest.mark.parametrize("i", range(len(PM_FIXTURES)))
    def test_probability_matching(self, i):
        assert probability_matching_gap(PM_FIXTURES[i]) <= 0.02


def test_update_agent_delegates():
    a = init_agent(Gaussian(np.zeros(2), np.eye(2)), 1.0)
    b = update_agent(a, [1.0, 0.0], 1.0)
    np.testing.assert_allclose(b.posterior.mean, [0.5, 0.0])
    assert b.prior_used is a.prior_used


class TestRegret:
    def test_optimal_arm_zero(self):
        assert instant_regret([1.0, 1.0], [[1.0, 0.0], [0.0, 2.0]], 0) == 0.0

    def test_hand_example(self):
        assert instant_regret([1.0, 1.0], [[1.0, 0.0], [0.0, 2.0]], 1) == pytest.approx(1.0)

    def test_equal_arms(self):
        assert instant_regret([0.3, -2.0], np.ones((3, 2)), 2) == 0.0

    def test_bad_index(self):
        with pytest.raises(IndexError):
            instant_regret([1.0], [[1.0], [2.0]], 2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            instant_regret([1.0, 2.0, 3.0], [[1.0, 0.0]], 0)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4))
    def test_nonnegative(self, seed, K, d):
        g = np.random.default_rng(seed)
        theta = g.standard_normal(d)
        ctx = g.standard_normal((K, d))
        means = ctx @ theta
        for c in range(K):
            r = instant_regret(theta, ctx, c)
            assert r >= 0.0
            assert (r == 0.0) == (means[c] == means.min())


def _cum_regret(prior, env, stage, n, seed):
    theta, ctx, noise = env.task(stage, n)
    tr = play_linear_bandit(init_agent(prior, env.sigma2), theta, ctx, noise, np.random.default_rng(seed))
    return tr.regret


P_STAR = Gaussian.isotropic([1.0, -1.0], 0.25)


def test_sublinear_regret_trend():
    env = LinearBanditTasks(P_STAR, seed=11)
    prior = uninformative_prior(2, 4.0)
    regs = np.array([_cum_regret(prior, env, s, 400, 1000 + s) for s in range(60)])
    c200, c400 = regs[:, :200].sum(axis=1), regs.sum(axis=1)
    assert c400.mean() / c200.mean() < 2


def test_oracle_dominates_uninformative():
    env = LinearBanditTasks(P_STAR, seed=12)
    flat = uninformative_prior(2, 4.0)
    oracle = [_cum_regret(P_STAR, env, s, 200, s).sum() for s in range(100)]
    unin = [_cum_regret(flat, env, s, 200, s).sum() for s in range(100)]
    assert np.mean(oracle) <= np.mean(unin)
