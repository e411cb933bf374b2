import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from criticpi2 import envs
from criticpi2.actor_critic import make_actor
from criticpi2.dynamics import (
    Normalizer,
    fit_normalizers,
    imagine_rollout,
    imagine_rollouts,
    make_dynamics_model,
    predict_next,
    train_dynamics,
)
from criticpi2.nn import gaussian_log_prob, loss_and_grads, zeros_like_params
from criticpi2.replay import TransitionBatch

IP = envs.make_spec(envs.INVERTED_PENDULUM)
IDP = envs.make_spec(envs.INVERTED_DOUBLE_PENDULUM)


def zero_model(obs_dim, action_dim):
    m = make_dynamics_model(obs_dim, action_dim, hidden=(16,), seed=0)
    return m.__class__(zeros_like_params(m.net), m.input_norm, m.target_norm, obs_dim, action_dim)


def batch_from(obs, actions, next_obs):
    n = obs.shape[0]
    return TransitionBatch(obs, actions, np.zeros(n), next_obs, np.zeros(n, bool), np.zeros(n))


def test_normalizer_std_floor():
    norm = Normalizer.fit(np.array([[1.0, 5.0], [1.0, 7.0]]))
    assert norm.std[0] == 1e-6 and norm.std[1] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_normalizer_round_trip(seed):
    rng = np.random.default_rng(seed)
    norm = Normalizer.fit(rng.normal(size=(50, 3)) * rng.uniform(0.1, 10, size=3) + rng.normal(size=3))
    z = rng.normal(size=(20, 3))
    assert np.max(np.abs(norm.normalize(norm.denormalize(z)) - z)) < 1e-12


def test_zero_model_is_identity():
    m = zero_model(4, 1)
    obs = np.array([0.1, -0.2, 0.3, 0.4])
    assert np.array_equal(predict_next(m, obs, np.array([0.5])), obs)


def test_predict_dimension_mismatch():
    m = zero_model(4, 1)
    with pytest.raises(ValueError):
        predict_next(m, np.zeros(3), np.zeros(1))


def test_self_transitions_zero_loss_at_start():
    m = zero_model(4, 1)
    obs = np.random.default_rng(0).normal(size=(64, 4))
    _, loss = train_dynamics(m, batch_from(obs, np.zeros((64, 1)), obs))
    assert loss == pytest.approx(0.0, abs=1e-20)


def test_constant_target_convergence():
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(256, 2))
    acts = rng.uniform(-1, 1, size=(256, 1))
    batch = batch_from(obs, acts, obs.copy())
    m = make_dynamics_model(2, 1, hidden=(16, 16), seed=0)
    for _ in range(500):
        m, _ = train_dynamics(m, batch, lr=1e-3)
    assert np.max(np.abs(predict_next(m, obs, acts) - obs)) < 1e-3


def test_linear_system_fit():
    rng = np.random.default_rng(2)
    obs = rng.uniform(-1, 1, size=(512, 1))
    acts = rng.uniform(-1, 1, size=(512, 1))
    batch = batch_from(obs, acts, obs + 0.1 * acts)
    m = fit_normalizers(make_dynamics_model(1, 1, hidden=(32, 32), seed=0), batch)
    for _ in range(2000):
        m, _ = train_dynamics(m, batch, lr=1e-3)
    assert predict_next(m, np.zeros(1), np.ones(1))[0] == pytest.approx(0.1, abs=0.01)


def test_overfit_one_batch():
    rng = np.random.default_rng(3)
    obs = rng.normal(size=(256, 4))
    acts = rng.uniform(-3, 3, size=(256, 1))
    nxt = obs + 0.05 * np.tanh(obs @ rng.normal(size=(4, 4))) + 0.02 * acts
    batch = batch_from(obs, acts, nxt)
    m = fit_normalizers(make_dynamics_model(4, 1, seed=0), batch)
    m, first = train_dynamics(m, batch)
    for _ in range(99):
        m, last = train_dynamics(m, batch)
    assert last <= 0.5 * first


def test_duplicated_rows_same_gradient():
    rng = np.random.default_rng(4)
    m = make_dynamics_model(3, 1, hidden=(8,), seed=1)
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
    _, g1 = loss_and_grads(m.net, x, y)
    _, g2 = loss_and_grads(m.net, np.tile(x, (2, 1)), np.tile(y, (2, 1)))
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_horizon_one_shape():
    m = zero_model(4, 1)
    actor = make_actor(4, 1, 0.3, hidden=(8,), seed=0)
    r = imagine_rollout(m, actor, envs.make_reward_fn(IP), np.zeros(4), [0.5], 1, np.random.default_rng(0), IP.action_bounds)
    assert r.observations.shape == (2, 4) and r.actions.shape == (1, 1) and r.rewards.shape == (1,)
    assert r.actions[0, 0] == 0.5
    assert np.array_equal(r.observations[0], np.zeros(4))


def test_zero_sigma_rollouts_repeat():
    m = make_dynamics_model(4, 1, seed=3)
    actor = make_actor(4, 1, 0.0, hidden=(8,), seed=0)
    fn = envs.make_reward_fn(IP)
    a = imagine_rollout(m, actor, fn, np.full(4, 0.01), [0.1], 5, np.random.default_rng(0), IP.action_bounds)
    b = imagine_rollout(m, actor, fn, np.full(4, 0.01), [0.1], 5, np.random.default_rng(1), IP.action_bounds)
    assert np.array_equal(a.observations, b.observations) and np.array_equal(a.rewards, b.rewards)


def test_frozen_double_pendulum_rewards():
    m = zero_model(11, 1)
    actor = make_actor(11, 1, 0.3, hidden=(8,), seed=0)
    start = np.zeros(11)
    start[3] = start[4] = 1.0
    r = imagine_rollout(m, actor, envs.make_reward_fn(IDP), start, [0.0], 3, np.random.default_rng(0), IDP.action_bounds)
    assert np.all(r.rewards == 10.0)


def test_imagined_termination_freezes_rollout():
    m = zero_model(4, 1)
    actor = make_actor(4, 1, 0.3, hidden=(8,), seed=0)
    start = np.array([0.0, 0.3, 0.0, 0.0])  # already past the pendulum limit
    r = imagine_rollout(m, actor, envs.make_reward_fn(IP), start, [0.0], 4, np.random.default_rng(0), IP.action_bounds)
    assert r.terminated
    assert r.rewards.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_divergence_fills_penalty():
    m = make_dynamics_model(4, 1, hidden=(4,), seed=0)
    m = m.__class__(m.net, m.input_norm, Normalizer(np.zeros(4), np.full(4, 1e308)), 4, 1)
    m = m.__class__(m.net.with_flat(m.net.flat * 1e3), m.input_norm, m.target_norm, 4, 1)
    batch = imagine_rollouts(
        m, None, envs.make_reward_fn(IP), np.ones(4), np.ones((2, 1)), 3, IP.action_bounds,
        later_actions=np.ones((2, 2, 1)), divergence_reward=-7.0,
    )
    assert batch.diverged.all()
    assert np.all(np.isfinite(batch.observations))
    assert np.all(batch.rewards == -7.0)


def test_actor_log_probs_recorded():
    m = zero_model(4, 1)
    actor = make_actor(4, 1, 0.5, hidden=(8,), seed=0)
    r = imagine_rollout(m, actor, envs.make_reward_fn(IP), np.zeros(4), [0.2], 6, np.random.default_rng(0), IP.action_bounds)
    expected = [gaussian_log_prob(actor, r.observations[t], r.actions[t]) for t in range(6)]
    assert np.allclose(r.behavior_log_probs, expected, rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 50), st.integers(0, 1000))
def test_rollout_length_contract(horizon, seed):
    m = make_dynamics_model(4, 1, hidden=(8,), seed=seed)
    actor = make_actor(4, 1, 0.3, hidden=(8,), seed=seed)
    r = imagine_rollout(m, actor, envs.make_reward_fn(IP), np.zeros(4), [0.0], horizon, np.random.default_rng(seed), IP.action_bounds)
    assert r.observations.shape[0] == horizon + 1
    assert r.actions.shape[0] == r.rewards.shape[0] == r.behavior_log_probs.shape[0] == horizon
    assert np.all(np.isfinite(r.observations)) and np.all(np.isfinite(r.rewards))
    assert np.all(r.actions >= IP.action_low) and np.all(r.actions <= IP.action_high)
