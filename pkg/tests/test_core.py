import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from mctscem.core import (Bounds, GaussianActionDistribution, PlannerConfig, Transition, as_state, clip_action,
                          refit, rng_stream, sample_sequence, sample_sequences, uniform_actions)

B2 = Bounds.box(-2.0, 2.0)
finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_bounds_box_broadcasts_and_validates():
    b = Bounds.box(-1.0, 1.0, dim=3)
    assert b.dim == 3 and np.all(b.low == -1) and np.all(b.high == 1)
    with pytest.raises(ValueError):
        Bounds.box(1.0, -1.0)


def test_distribution_floors_variance_and_is_read_only():
    d = GaussianActionDistribution(np.zeros((3, 1)), np.zeros((3, 1)), var_floor=1e-4)
    assert np.all(d.var == 1e-4)
    with pytest.raises(ValueError):
        d.mean[0, 0] = 1.0
    with pytest.raises(ValueError):
        GaussianActionDistribution(np.zeros((3, 1)), np.ones((2, 1)))


def test_shifted_drops_first_step():
    mean = np.arange(4.0)[:, None]
    d = GaussianActionDistribution(mean, np.ones((4, 1))).shifted()
    np.testing.assert_array_equal(d.mean[:, 0], [1, 2, 3, 3])


def test_step_marginal_clamps_to_horizon():
    d = GaussianActionDistribution(np.arange(3.0)[:, None], np.ones((3, 1)))
    assert d.step_marginal(10)[0][0] == 2.0
    assert d.step_marginal(-1)[0][0] == 0.0


def test_sample_degenerate_variance_gives_zeros():
    d = GaussianActionDistribution(np.zeros((5, 1)), np.full((5, 1), 1e-12), var_floor=1e-12)
    seq = sample_sequence(d, rng_stream(0, 1), B2)
    np.testing.assert_allclose(seq, 0.0, atol=1e-4)


def test_sample_mean_outside_bounds_is_clipped():
    d = GaussianActionDistribution(np.full((5, 1), 3.0), np.full((5, 1), 1e-4))
    seq = sample_sequence(d, rng_stream(0, 1), B2)
    assert np.all(seq == 2.0)


def test_sample_moments_match_clipped_normal():
    # Oracle: moments of N(0,1) clipped to [-2, 2], by numerical integration.
    x = np.linspace(-2, 2, 200001)
    pdf = stats.norm.pdf(x)
    tail = stats.norm.sf(2.0)
    ex2 = np.trapezoid(x ** 2 * pdf, x) + 2 * 4.0 * tail
    d = GaussianActionDistribution.standard(1, 1)
    s = sample_sequences(d, rng_stream(3, 0), B2, 10_000)[:, 0, 0]
    assert abs(s.mean()) < 0.05
    assert abs(s.var() - ex2) < 0.1


def test_sampling_is_pure_function_of_seed():
    d = GaussianActionDistribution.standard(4, 2)
    b = Bounds.box(-1, 1, dim=2)
    np.testing.assert_array_equal(sample_sequence(d, rng_stream(7, 1, 2), b), sample_sequence(d, rng_stream(7, 1, 2), b))
    assert not np.array_equal(sample_sequence(d, rng_stream(7, 1, 2), b), sample_sequence(d, rng_stream(7, 1, 3), b))


def test_refit_scalar_example():
    d = refit(np.array([1.0, 2.0, 3.0, 4.0]), [3, 2], var_floor=1e-4)
    assert d.mean.item() == 3.5
    assert d.var.item() == max(0.25, 1e-4)


def test_refit_single_elite_and_identical_elites():
    d = refit(np.array([2.0, 5.0]), [0])
    assert d.mean.item() == 2.0 and d.var.item() == 1e-4
    cands = np.tile(np.array([[0.5], [-0.5]]), (4, 1, 1))
    d = refit(cands, [0, 1, 2])
    np.testing.assert_array_equal(d.mean, cands[0])
    assert np.all(d.var == 1e-4)


def test_refit_empty_elite_raises():
    with pytest.raises(ValueError):
        refit(np.zeros((3, 2, 1)), [])


@given(arrays(float, (6, 3, 2), elements=st.floats(-5, 5)), st.integers(1, 6))
def test_refit_variance_respects_floor(cands, k):
    d = refit(cands, range(k), var_floor=1e-3)
    assert np.all(d.var >= 1e-3)
    np.testing.assert_allclose(d.mean, cands[:k].mean(axis=0))


def test_refit_then_degenerate_sample_reproduces_elite_mean():
    rng = np.random.default_rng(0)
    cands = rng.uniform(-1, 1, (10, 4, 1))
    d = refit(cands, [0, 1, 2])
    tight = GaussianActionDistribution(d.mean, np.full(d.mean.shape, 1e-12), var_floor=1e-12)
    np.testing.assert_allclose(sample_sequence(tight, rng, B2), np.clip(d.mean, -2, 2), atol=1e-4)


def test_clip_examples():
    assert clip_action(np.array([3.0]), B2)[0] == 2.0
    assert clip_action(np.array([0.5]), B2)[0] == 0.5


@given(arrays(float, 3, elements=finite))
def test_clip_idempotent_and_in_bounds(x):
    b = Bounds.box([-1, -2, 0], [1, 2, 0.5])
    c = clip_action(x, b)
    np.testing.assert_array_equal(clip_action(c, b), c)
    assert np.all(c >= b.low) and np.all(c <= b.high)


def test_uniform_actions_shape_and_range():
    b = Bounds.box(-1, 1, dim=2)
    a = uniform_actions(rng_stream(0), b, 100)
    assert a.shape == (100, 2) and np.all(np.abs(a) <= 1)


def test_planner_config_validation():
    PlannerConfig()
    bad = [dict(k_elite=600), dict(knn_k=100, ev_samples=20, ensemble_m=5), dict(rollout_horizon=20),
           dict(lam=-1.0), dict(gamma=0.0), dict(gamma=1.5), dict(horizon=0), dict(reward_mode="x"),
           dict(propagation="x"), dict(var_floor=0.0), dict(c_ucb=-1.0)]
    for kw in bad:
        with pytest.raises(ValueError):
            PlannerConfig(**kw)


def test_transition_rejects_nonfinite():
    with pytest.raises(ValueError):
        Transition(np.array([np.nan]), np.zeros(1), np.zeros(1), 0.0, False)
    with pytest.raises(ValueError):
        Transition(np.zeros(1), np.zeros(1), np.zeros(1), np.inf, False)


def test_as_state():
    np.testing.assert_array_equal(as_state([1, 2], 2), [1.0, 2.0])
    with pytest.raises(ValueError):
        as_state([1, 2], 3)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32), st.integers(0, 100), st.integers(0, 100))
def test_rng_streams_distinct_by_key(seed, a, b):
    x = rng_stream(seed, a, 0).integers(0, 2 ** 62)
    y = rng_stream(seed, a, 0).integers(0, 2 ** 62)
    assert x == y
    if a != b:
        assert rng_stream(seed, a).integers(0, 2 ** 62) != rng_stream(seed, b).integers(0, 2 ** 62)
