import numpy as np
import pytest

from metats.bandit import init_agent, uninformative_prior
from metats.engine import run_track_fast
from metats.gaussian import Gaussian
from metats.radar import SceneConfig, make_world, run_track, sample_task

P_STAR = Gaussian.isotropic([1.0, 0.5], 0.25)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("informed", [False, True])
def test_fast_matches_reference(seed, informed):
    cfg = SceneConfig()
    g = np.random.default_rng(seed)
    world = make_world(sample_task(P_STAR, g), 150, cfg, g, 100 + seed, 200 + seed)
    prior = P_STAR if informed else uninformative_prior(2, 4.0)
    agent = init_agent(prior, 1.0)
    ref = run_track(world, agent, 150, np.random.default_rng(seed), cfg)
    fast = run_track_fast(world, agent, 150, np.random.default_rng(seed), cfg)
    np.testing.assert_array_equal(fast.chosen, ref.chosen)
    np.testing.assert_array_equal(fast.observations, ref.observations)
    for name in ("design", "losses", "regret", "sinr_db", "position_error"):
        np.testing.assert_allclose(getattr(fast, name), getattr(ref, name), rtol=1e-10, atol=1e-10)
    assert (fast.lost, fast.lost_at) == (ref.lost, ref.lost_at)
    np.testing.assert_allclose(fast.final_agent.posterior.precision, ref.final_agent.posterior.precision, rtol=1e-10)
    np.testing.assert_allclose(fast.final_agent.posterior.shift, ref.final_agent.posterior.shift, rtol=1e-10)


def test_bulk_draws_match_single_draws():
    # the engine draws all of a stream at once; the reference draws one CPI at a time
    a = np.random.default_rng(5).standard_normal((40, 2))
    g = np.random.default_rng(5)
    b = np.array([g.standard_normal(2) for _ in range(40)])
    np.testing.assert_array_equal(a, b)
    g = np.random.default_rng(5)
    c = np.array([g.standard_normal() for _ in range(80)]).reshape(40, 2)
    np.testing.assert_array_equal(a, c)


def test_horizon_longer_than_world():
    cfg = SceneConfig()
    g = np.random.default_rng(0)
    world = make_world(sample_task(P_STAR, g), 10, cfg, g, 1, 2)
    with pytest.raises(ValueError):
        run_track_fast(world, init_agent(P_STAR, 1.0), 11, g, cfg)
