"""Learned differential dynamics and imagined rollouts.

The network predicts the normalized state change ``s' - s`` from the
normalized ``(s, a)`` pair; :func:`predict_next` adds the denormalized delta
back onto the observation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import RewardFn
from .nn import GaussianPolicyHead, MlpParameters, log_prob_from_mean, mlp_forward, mlp_init, train_step
from .replay import TransitionBatch

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, dtype=float), STD_FLOOR))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        data = np.asarray(data, dtype=float)
        return cls(data.mean(axis=0), data.std(axis=0))

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


@dataclass(frozen=True)
class DynamicsModel:
    net: MlpParameters
    input_norm: Normalizer
    target_norm: Normalizer
    obs_dim: int
    action_dim: int


def make_dynamics_model(
    obs_dim: int, action_dim: int, hidden: Sequence[int] = (64, 64), seed=0, output_scale: float = 0.01
) -> DynamicsModel:
    net = mlp_init([obs_dim + action_dim, *hidden, obs_dim], seed, output_scale=output_scale)
    return DynamicsModel(
        net=net,
        input_norm=Normalizer.identity(obs_dim + action_dim),
        target_norm=Normalizer.identity(obs_dim),
        obs_dim=obs_dim,
        action_dim=action_dim,
    )


def _inputs(model: DynamicsModel, obs, action) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    action = np.asarray(action, dtype=float)
    if obs.shape[-1] != model.obs_dim or action.shape[-1] != model.action_dim:
        raise ValueError(
            f"expected obs width {model.obs_dim} and action width {model.action_dim}, "
            f"got {obs.shape} and {action.shape}"
        )
    return model.input_norm.normalize(np.concatenate([obs, action], axis=-1))


def predict_delta(model: DynamicsModel, obs, action) -> np.ndarray:
    return model.target_norm.denormalize(mlp_forward(model.net, _inputs(model, obs, action)))


def predict_next(model: DynamicsModel, obs, action) -> np.ndarray:
    """Next observation for one ``(obs, action)`` pair or a batch of them."""
    return np.asarray(obs, dtype=float) + predict_delta(model, obs, action)


def fit_normalizers(model: DynamicsModel, batch: TransitionBatch) -> DynamicsModel:
    """Refreshes input/target statistics, typically from the whole buffer."""
    inputs = np.concatenate([batch.obs, batch.actions], axis=1)
    return dataclasses.replace(
        model,
        input_norm=Normalizer.fit(inputs),
        target_norm=Normalizer.fit(batch.next_obs - batch.obs),
    )


def train_dynamics(model: DynamicsModel, batch: TransitionBatch, lr: float = 1e-3) -> tuple[DynamicsModel, float]:
    """One MSE step on normalized differential targets."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    inputs = _inputs(model, batch.obs, batch.actions)
    targets = model.target_norm.normalize(batch.next_obs - batch.obs)
    net, loss = train_step(model.net, inputs, targets, "mse", lr)
    return dataclasses.replace(model, net=net), loss


# ---------------------------------------------------------------------------
# Imagination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rollout:
    observations: np.ndarray  # (H+1, obs_dim)
    actions: np.ndarray  # (H, action_dim)
    rewards: np.ndarray  # (H,)
    behavior_log_probs: np.ndarray  # (H,)
    terminated: bool = False
    diverged: bool = False

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]


@dataclass(frozen=True)
class RolloutBatch:
    """``K`` rollouts stacked along the leading axis."""

    observations: np.ndarray  # (K, H+1, obs_dim)
    actions: np.ndarray  # (K, H, action_dim)
    rewards: np.ndarray  # (K, H)
    behavior_log_probs: np.ndarray  # (K, H)
    terminated: np.ndarray  # (K,)
    diverged: np.ndarray  # (K,)

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def __getitem__(self, i: int) -> Rollout:
        return Rollout(
            self.observations[i],
            self.actions[i],
            self.rewards[i],
            self.behavior_log_probs[i],
            bool(self.terminated[i]),
            bool(self.diverged[i]),
        )

    @staticmethod
    def concatenate(parts: Sequence["RolloutBatch"]) -> "RolloutBatch":
        return RolloutBatch(*(np.concatenate([getattr(p, f.name) for p in parts]) for f in dataclasses.fields(RolloutBatch)))


def imagine_rollouts(
    model: DynamicsModel,
    actor: GaussianPolicyHead | None,
    reward_fn: RewardFn,
    start_obs,
    first_actions: np.ndarray,
    horizon: int,
    bounds: tuple[np.ndarray, np.ndarray],
    noise: np.ndarray | None = None,
    later_actions: np.ndarray | None = None,
    divergence_reward: float = 0.0,
    log_probs: bool = True,
) -> RolloutBatch:
    """Rolls ``K`` trajectories from one start observation through the model.

    Step 0 applies ``first_actions[k]``. Later steps apply either the given
    ``later_actions`` (shape ``(K, H-1, action_dim)``) or actor samples
    ``mean + sigma * noise`` clipped to ``bounds``, with ``noise`` pre-drawn by
    the caller so the result does not depend on how rollouts are batched.
    An imagined termination freezes the rollout: later rewards are zero.
    A non-finite prediction freezes it too and fills the remaining rewards
    with ``divergence_reward``. ``log_probs=False`` skips the behavior
    log-probabilities (left at 0) when only returns are needed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    first_actions = np.atleast_2d(np.asarray(first_actions, dtype=float))
    k, adim = first_actions.shape
    start_obs = np.asarray(start_obs, dtype=float)
    low, high = bounds
    if later_actions is None and horizon > 1:
        if actor is None:
            raise ValueError("an actor or explicit later actions are needed for horizon > 1")
        if noise is None:
            noise = np.zeros((k, horizon - 1, adim))

    obs_seq = np.empty((k, horizon + 1, start_obs.shape[-1]))
    act_seq = np.empty((k, horizon, adim))
    rewards = np.zeros((k, horizon))
    logp = np.zeros((k, horizon))
    alive = np.ones(k, dtype=bool)
    terminated = np.zeros(k, dtype=bool)
    diverged = np.zeros(k, dtype=bool)

    # A zero-sigma actor has no density; its log-probs are recorded as 0.
    if actor is None or not log_probs or np.any(actor.sigma <= 0):
        actor_logp = None
    else:
        actor_logp = actor
    obs = np.broadcast_to(start_obs, (k, start_obs.shape[-1])).copy()
    obs_seq[:, 0] = obs
    for t in range(horizon):
        if t == 0:
            actions = first_actions
            if actor_logp is not None:
                logp[:, 0] = log_prob_from_mean(actor.mean(start_obs), actor.sigma, actions)
        else:
            if later_actions is not None:
                actions = later_actions[:, t - 1]
                if actor_logp is not None:
                    logp[:, t] = log_prob_from_mean(actor.mean(obs), actor.sigma, actions)
            else:
                mean = actor.mean(obs)
                actions = np.clip(mean + actor.sigma * noise[:, t - 1], low, high)
                if actor_logp is not None:
                    logp[:, t] = log_prob_from_mean(mean, actor.sigma, actions)
        act_seq[:, t] = actions
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = predict_next(model, obs, actions)
        finite = np.all(np.isfinite(nxt), axis=1)
        if not finite.all():
            blown = alive & ~finite
            diverged |= blown
            rewards[blown, t:] = divergence_reward
            alive &= finite
            nxt = np.where(finite[:, None], nxt, obs)
        r, done = reward_fn(nxt)
        rewards[alive, t] = r[alive]
        nxt = np.where(alive[:, None], nxt, obs)
        terminated |= alive & done
        alive &= ~done
        obs = nxt
        obs_seq[:, t + 1] = obs
    return RolloutBatch(obs_seq, act_seq, rewards, logp, terminated, diverged)


def imagine_rollout(
    model: DynamicsModel,
    actor: GaussianPolicyHead,
    reward_fn: RewardFn,
    start_obs,
    first_action,
    horizon: int,
    rng: np.random.Generator,
    bounds: tuple[np.ndarray, np.ndarray],
    divergence_reward: float = 0.0,
) -> Rollout:
    first_action = np.asarray(first_action, dtype=float).reshape(1, -1)
    noise = rng.standard_normal((1, max(horizon - 1, 0), first_action.shape[1]))
    batch = imagine_rollouts(
        model, actor, reward_fn, start_obs, first_action, horizon, bounds, noise=noise,
        divergence_reward=divergence_reward,
    )
    return batch[0]
