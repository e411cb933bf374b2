"""Value targets (n-step, Monte Carlo, V-trace), critic and actor training, DDPG."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import (
    GaussianPolicyHead,
    MlpParameters,
    adam_step,
    backward,
    forward_with_cache,
    log_prob_from_mean,
    mlp_forward,
    mlp_init,
    polyak,
    train_step,
)
from .replay import SequenceBatch, TransitionBatch


@dataclass(frozen=True)
class Critic:
    """State-value network whose raw output is measured in units of ``value_scale``.

    Regressing on O(1) targets keeps the tanh layers out of saturation when
    returns are in the hundreds.
    """

    net: MlpParameters
    value_scale: float = 1.0

    def value(self, obs) -> np.ndarray:
        out = mlp_forward(self.net, obs)
        return self.value_scale * out[..., 0]


def make_critic(
    obs_dim: int, hidden: Sequence[int] = (64, 64), seed=0, output_scale: float = 0.01, value_scale: float = 1.0
) -> Critic:
    if not value_scale > 0:
        raise ValueError("value_scale must be > 0")
    return Critic(mlp_init([obs_dim, *hidden, 1], seed, output_scale=output_scale), value_scale)


def make_actor(
    obs_dim: int, action_dim: int, sigma, hidden: Sequence[int] = (64, 64), seed=0, output_scale: float = 0.01
) -> GaussianPolicyHead:
    return GaussianPolicyHead(mlp_init([obs_dim, *hidden, action_dim], seed, output_scale=output_scale), sigma)


@dataclass(frozen=True)
class VtraceConfig:
    gamma: float = 0.99
    rho_bar: float = 1.0
    c_bar: float = 1.0
    n: int = 5

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.rho_bar < self.c_bar:
            raise ValueError("rho_bar must be >= c_bar")
        if self.c_bar <= 0:
            raise ValueError("c_bar must be > 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")


# ---------------------------------------------------------------------------
# Returns
# ---------------------------------------------------------------------------


def n_step_return(rewards: Sequence[float], bootstrap_value: float, gamma: float) -> float:
    """``sum_k gamma^k r_k + gamma^len * bootstrap``.

    Pass ``bootstrap_value=0`` when the trajectory terminated inside the window.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("rewards must be non-empty")
    discounts = gamma ** np.arange(rewards.size)
    return float(discounts @ rewards + gamma**rewards.size * bootstrap_value)


def monte_carlo_return(rewards: Sequence[float], gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=float)
    return float((gamma ** np.arange(rewards.size)) @ rewards)


def vtrace_targets(
    batch: SequenceBatch, critic: Critic, target_actor: GaussianPolicyHead, cfg: VtraceConfig
) -> np.ndarray:
    """V-trace target for the first state of every window in ``batch``.

    Importance ratios are target-policy density over the stored behavior
    density, clipped at ``rho_bar`` (for the TD error) and ``c_bar`` (for
    the trace). Values after a terminal transition are zero.
    """
    if batch.behavior_log_probs is None:
        raise ValueError("behavior log-probabilities are required")
    b, n = batch.rewards.shape
    obs_dim = batch.obs.shape[-1]
    mask = batch.mask.astype(float)

    v = critic.value(batch.obs.reshape(b * n, obs_dim)).reshape(b, n)
    v_next = critic.value(batch.next_obs.reshape(b * n, obs_dim)).reshape(b, n)
    v_next = np.where(batch.terminated, 0.0, v_next)

    means = target_actor.mean(batch.obs.reshape(b * n, obs_dim))
    adim = means.shape[-1]
    target_logp = log_prob_from_mean(means, target_actor.sigma, batch.actions.reshape(b * n, adim)).reshape(b, n)
    ratio = np.exp(np.minimum(target_logp - batch.behavior_log_probs, 50.0))
    rho = np.minimum(cfg.rho_bar, ratio)
    c = np.minimum(cfg.c_bar, ratio)

    delta = rho * (batch.rewards + cfg.gamma * v_next - v) * mask
    # trace[t] = prod_{i<t} c_i, with c_i taken only over real steps.
    c_masked = np.where(batch.mask, c, 1.0)
    trace = np.concatenate([np.ones((b, 1)), np.cumprod(c_masked[:, :-1], axis=1)], axis=1)
    discounts = cfg.gamma ** np.arange(n)
    return v[:, 0] + np.sum(discounts * trace * delta, axis=1)


def vtrace_sequence_targets(
    transitions, critic: Critic, target_actor: GaussianPolicyHead, cfg: VtraceConfig
) -> np.ndarray:
    """``v_s`` for every state of one contiguous sequence, windows of ``cfg.n``."""
    transitions = list(transitions)
    whole = SequenceBatch.from_transitions(transitions)
    length = len(transitions)
    idx = np.arange(length)[:, None] + np.arange(cfg.n)[None, :]
    valid = idx < length
    idx = np.minimum(idx, length - 1)

    def take(arr):
        out = arr[0][idx]
        out[~valid] = 0
        return out

    windows = SequenceBatch(
        obs=take(whole.obs),
        actions=take(whole.actions),
        rewards=take(whole.rewards),
        next_obs=take(whole.next_obs),
        terminated=take(whole.terminated),
        behavior_log_probs=take(whole.behavior_log_probs),
        mask=valid,
        lengths=valid.sum(axis=1),
    )
    return vtrace_targets(windows, critic, target_actor, cfg)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train_critic(
    critic: Critic,
    batch: SequenceBatch,
    actor: GaussianPolicyHead,
    cfg: VtraceConfig,
    lr: float = 1e-3,
) -> tuple[Critic, float]:
    """One MSE step toward V-trace targets from the pre-step critic."""
    if batch.rewards.shape[0] == 0:
        raise ValueError("empty batch")
    targets = vtrace_targets(batch, critic, actor, cfg)
    scale = critic.value_scale
    net, loss = train_step(critic.net, batch.obs[:, 0], targets[:, None] / scale, "mse", lr)
    return Critic(net, scale), loss * scale**2


def train_actor_imitation(
    actor: GaussianPolicyHead, states, expert_actions, lr: float = 3e-4
) -> tuple[GaussianPolicyHead, float]:
    """One Gaussian negative log-likelihood step toward expert actions."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    expert_actions = np.asarray(expert_actions, dtype=float).reshape(states.shape[0], -1)
    net, loss = train_step(actor.mean_net, states, expert_actions, "gaussian_nll", lr, sigma=actor.sigma)
    return dataclasses.replace(actor, mean_net=net), loss


# ---------------------------------------------------------------------------
# DDPG baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DdpgNetworks:
    """Deterministic ``tanh`` actor in normalized action units, plus Q and targets."""

    actor: MlpParameters
    q: MlpParameters
    actor_target: MlpParameters
    q_target: MlpParameters


def make_ddpg(obs_dim: int, action_dim: int, hidden: Sequence[int] = (64, 64), seed=0) -> DdpgNetworks:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    a_seed, q_seed = ss.spawn(2)
    actor = mlp_init([obs_dim, *hidden, action_dim], a_seed, output_scale=0.01, output_activation="tanh")
    q = mlp_init([obs_dim + action_dim, *hidden, 1], q_seed, output_scale=0.01)
    return DdpgNetworks(actor, q, actor, q)


def ddpg_update(
    nets: DdpgNetworks,
    batch: TransitionBatch,
    gamma: float,
    tau: float = 0.005,
    lr_actor: float = 3e-4,
    lr_q: float = 1e-3,
    action_center: float = 0.0,
    action_half_range: float = 1.0,
) -> tuple[DdpgNetworks, float, float]:
    """One critic step, one actor step, then Polyak-averaged targets.

    Stored actions are in environment units and mapped to ``[-1, 1]`` with
    ``action_center`` and ``action_half_range``.
    """
    actions = (batch.actions - action_center) / action_half_range
    next_a = mlp_forward(nets.actor_target, batch.next_obs)
    next_q = mlp_forward(nets.q_target, np.concatenate([batch.next_obs, next_a], axis=1))[:, 0]
    y = batch.rewards + gamma * np.where(batch.terminated, 0.0, next_q)
    q, q_loss = train_step(nets.q, np.concatenate([batch.obs, actions], axis=1), y[:, None], "mse", lr_q)

    # Actor ascends Q(s, mu(s)): chain dQ/da through the actor network.
    mu, actor_acts = forward_with_cache(nets.actor, batch.obs)
    q_val, q_acts = forward_with_cache(q, np.concatenate([batch.obs, mu], axis=1))
    actor_loss = -float(np.mean(q_val))
    _, grad_in = backward(q, q_acts, -np.ones_like(q_val) / q_val.shape[0])
    grad_mu = grad_in[:, batch.obs.shape[1] :]
    grad, _ = backward(nets.actor, actor_acts, grad_mu)
    actor = adam_step(nets.actor, grad, lr_actor)

    return (
        DdpgNetworks(
            actor=actor,
            q=q,
            actor_target=polyak(nets.actor_target, actor, tau),
            q_target=polyak(nets.q_target, q, tau),
        ),
        q_loss,
        actor_loss,
    )

