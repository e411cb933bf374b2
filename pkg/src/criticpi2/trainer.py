"""Episode collection, central training and the experiment loop."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import envs
from .actor_critic import (
    Critic,
    DdpgNetworks,
    ddpg_update,
    make_actor,
    make_critic,
    make_ddpg,
    train_actor_imitation,
    train_critic,
)
from .config import ExperimentConfig
from .dynamics import DynamicsModel, fit_normalizers, make_dynamics_model, train_dynamics
from .nn import GaussianPolicyHead, MlpParameters, gaussian_log_prob, mlp_forward
from .planner import baseline_plan, critic_pi2_plan
from .replay import InsufficientDataError, ReplayBuffer, Transition, sample_sequences

log = logging.getLogger(__name__)

LossSummary = dict[str, list[float]]


@dataclass
class ModelSet:
    actor: GaussianPolicyHead
    critic: Critic
    dynamics: DynamicsModel


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class Agent:
    kind = "base"

    def act(self, obs: np.ndarray, rng: np.random.Generator, evaluate: bool) -> tuple[np.ndarray, float]:
        """Returns ``(action, behavior_log_prob)``."""
        raise NotImplementedError

    def train(self, buffer: ReplayBuffer, rng: np.random.Generator) -> LossSummary:
        return {}

    def networks(self) -> dict[str, MlpParameters]:
        return {}


class RandomAgent(Agent):
    kind = "random"

    def __init__(self, spec: envs.EnvSpec):
        self.spec = spec

    def act(self, obs, rng, evaluate):
        low, high = self.spec.action_bounds
        return rng.uniform(low, high), 0.0


class ModelBasedAgent(Agent):
    """Critic PI2 and its model-based baselines (vanilla PI2, random-shooting MPC)."""

    def __init__(self, cfg: ExperimentConfig, spec: envs.EnvSpec, models: ModelSet):
        self.kind = cfg.agent
        self.cfg = cfg
        self.spec = spec
        self.models = models
        self.planner = cfg.effective_planner()
        self.reward_fn = envs.make_reward_fn(spec)
        self.bounds = spec.action_bounds
        self.divergence_reward = 0.0

    @property
    def uses_critic(self) -> bool:
        return self.kind == "critic_pi2" and self.planner.return_mode == "critic_bootstrap"

    @property
    def uses_actor(self) -> bool:
        return self.kind != "mpc"

    def plan(self, obs, rng, evaluate: bool):
        m = self.models
        gamma = self.cfg.vtrace.gamma
        if self.kind == "critic_pi2":
            planner = self.planner
            if evaluate and planner.inner_actor_update:
                planner = dataclasses.replace(planner, inner_actor_update=False)
            return critic_pi2_plan(
                obs, m.actor, m.critic if self.uses_critic else None, m.dynamics, self.reward_fn,
                planner, rng, self.bounds, gamma=gamma, divergence_reward=self.divergence_reward,
                actor_lr=self.cfg.networks.actor_lr,
            )
        mode = "vanilla_pi2" if self.kind == "vanilla_pi2" else "mpc_random_shooting"
        return baseline_plan(
            obs, m.actor, m.dynamics, self.reward_fn, self.planner, mode, rng, self.bounds,
            gamma=gamma, divergence_reward=self.divergence_reward,
        )

    def act(self, obs, rng, evaluate):
        result = self.plan(obs, rng, evaluate)
        if not evaluate and result.actor is not None:
            self.models.actor = result.actor
        action = np.clip(result.expert_action, *self.bounds)
        return action, float(gaussian_log_prob(self.models.actor, obs, action))

    def train(self, buffer, rng):
        if np.isfinite(buffer.min_reward):
            self.divergence_reward = float(buffer.min_reward)
        self.models, losses = central_training(
            buffer,
            self.models,
            self.cfg,
            rng,
            train_critic_net=self.uses_critic,
            train_actor=self.uses_actor and not self.cfg.ablation.no_actor_training,
        )
        return losses

    def networks(self):
        out = {"dynamics": self.models.dynamics.net}
        if self.uses_actor:
            out["actor"] = self.models.actor.mean_net
        if self.uses_critic:
            out["critic"] = self.models.critic.net
        return out


class DdpgAgent(Agent):
    kind = "ddpg"

    def __init__(self, cfg: ExperimentConfig, spec: envs.EnvSpec, nets: DdpgNetworks):
        self.cfg = cfg
        self.spec = spec
        self.nets = nets
        self.center = 0.5 * (spec.action_high + spec.action_low)
        self.half = spec.half_range

    def act(self, obs, rng, evaluate):
        mu = mlp_forward(self.nets.actor, obs)
        if not evaluate:
            mu = mu + self.cfg.training.ddpg_noise * rng.standard_normal(mu.shape)
        action = np.clip(self.center + self.half * mu, self.spec.action_low, self.spec.action_high)
        return action, 0.0

    def train(self, buffer, rng):
        t = self.cfg.training
        losses: LossSummary = {"critic": [], "actor": []}
        if len(buffer) == 0:
            log.warning("replay buffer empty; skipping DDPG training")
            return losses
        for _ in range(t.epochs * t.ddpg_epoch_multiplier):
            batch = buffer.sample(t.batch_size, rng)
            self.nets, q_loss, a_loss = ddpg_update(
                self.nets, batch, self.cfg.vtrace.gamma, t.ddpg_tau,
                lr_actor=self.cfg.networks.actor_lr, lr_q=self.cfg.networks.critic_lr,
                action_center=self.center, action_half_range=self.half,
            )
            losses["critic"].append(q_loss)
            losses["actor"].append(a_loss)
        return losses

    def networks(self):
        return {"actor": self.nets.actor, "critic": self.nets.q}


def build_agent(cfg: ExperimentConfig, spec: envs.EnvSpec, seed_seq: np.random.SeedSequence) -> Agent:
    hidden = cfg.networks.hidden
    if cfg.agent == "random":
        return RandomAgent(spec)
    if cfg.agent == "ddpg":
        return DdpgAgent(cfg, spec, make_ddpg(spec.obs_dim, spec.action_dim, hidden, seed_seq))
    a_seed, c_seed, d_seed = seed_seq.spawn(3)
    sigma = cfg.networks.policy_sigma * spec.half_range
    value_scale = envs.max_reward(spec) * cfg.networks.critic_value_steps
    models = ModelSet(
        actor=make_actor(spec.obs_dim, spec.action_dim, sigma, hidden, a_seed),
        critic=make_critic(spec.obs_dim, hidden, c_seed, value_scale=value_scale),
        dynamics=make_dynamics_model(spec.obs_dim, spec.action_dim, hidden, d_seed),
    )
    return ModelBasedAgent(cfg, spec, models)


# ---------------------------------------------------------------------------
# Central training
# ---------------------------------------------------------------------------


def central_training(
    buffer: ReplayBuffer,
    models: ModelSet,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    train_critic_net: bool = True,
    train_actor: bool = True,
) -> tuple[ModelSet, LossSummary]:
    """``cfg.training.epochs`` rounds of one batch step per trained network.

    Dynamics normalization statistics are refit from the whole buffer first.
    Returns new models; the inputs are not modified.
    """
    t = cfg.training
    nets = cfg.networks
    losses: LossSummary = {"dynamics": []}
    if train_critic_net:
        losses["critic"] = []
    if train_actor:
        losses["actor"] = []
    if len(buffer) == 0:
        log.warning("replay buffer empty; skipping central training")
        return models, losses
    if t.epochs == 0:
        return models, losses

    actor, critic, dynamics = models.actor, models.critic, models.dynamics
    dynamics = fit_normalizers(dynamics, buffer.all())
    n = cfg.vtrace.n
    for _ in range(t.epochs):
        dynamics, loss = train_dynamics(dynamics, buffer.sample(t.batch_size, rng), nets.dynamics_lr)
        losses["dynamics"].append(loss)
        if train_critic_net:
            try:
                seqs = sample_sequences(buffer, t.batch_size, n, rng)
            except InsufficientDataError:
                # Episodes shorter than n: fall back to the longest window available.
                longest = int(buffer.step_ids[: len(buffer)].max()) + 1
                seqs = sample_sequences(buffer, t.batch_size, min(n, longest), rng)
            critic, loss = train_critic(critic, seqs, actor, cfg.vtrace, nets.critic_lr)
            losses["critic"].append(loss)
        if train_actor:
            b = buffer.sample(t.batch_size, rng)
            actor, loss = train_actor_imitation(actor, b.obs, b.actions, nets.actor_lr)
            losses["actor"].append(loss)
    return ModelSet(actor, critic, dynamics), losses


# ---------------------------------------------------------------------------
# Episodes and experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeRecord:
    episode_return: float
    length: int
    mean_plan_time_s: float
    terminated: bool
    diverged: bool = False


def run_episode(
    spec: envs.EnvSpec,
    agent: Agent,
    buffer: ReplayBuffer | None,
    rng: np.random.Generator,
    reset_seed,
    evaluate: bool = False,
) -> EpisodeRecord:
    """Plays one episode; transitions go to ``buffer`` unless it is ``None``.

    The reported return is the undiscounted reward sum.
    """
    env = envs.Env(spec)
    obs = env.reset(reset_seed)
    total, steps, plan_time = 0.0, 0, 0.0
    result = None
    while not env.done:
        t0 = time.perf_counter()
        action, logp = agent.act(obs, rng, evaluate)
        plan_time += time.perf_counter() - t0
        result = env.step(action)
        steps += 1
        total += result.reward
        if buffer is not None and not result.diverged:
            buffer.add(
                Transition(
                    obs=obs,
                    action=np.clip(action, spec.action_low, spec.action_high),
                    reward=result.reward,
                    next_obs=result.observation,
                    terminated=result.terminated,
                    behavior_log_prob=logp,
                )
            )
        obs = result.observation
    if buffer is not None:
        buffer.end_episode()
    return EpisodeRecord(
        episode_return=total,
        length=steps,
        mean_plan_time_s=plan_time / max(steps, 1),
        terminated=bool(result is not None and result.terminated),
        diverged=bool(result is not None and result.diverged),
    )


@dataclass(frozen=True)
class ResultRow:
    episode: int
    train_return: float
    episode_length: int
    eval_return: float | None
    dynamics_loss: float | None
    critic_loss: float | None
    actor_loss: float | None
    mean_plan_time_s: float
    wall_time_s: float


@dataclass
class ExperimentResult:
    rows: list[ResultRow] = field(default_factory=list)
    agent: Agent | None = None
    buffer: ReplayBuffer | None = None


def _mean_or_none(values):
    return float(np.mean(values)) if values else None


def run_experiment(
    cfg: ExperimentConfig,
    stop_when: Callable[[list[ResultRow]], bool] | None = None,
    on_row: Callable[[ResultRow], None] | None = None,
) -> ExperimentResult:
    """Runs the collect / train / evaluate loop for ``cfg.training.episodes`` episodes.

    ``stop_when`` is called after each row and may end the run early.
    """
    spec = cfg.env.build()
    root = np.random.SeedSequence(cfg.seed)
    init_seq, plan_seq, train_seq, eval_seq = root.spawn(4)
    agent = build_agent(cfg, spec, init_seq)
    plan_rng = np.random.default_rng(plan_seq)
    train_rng = np.random.default_rng(train_seq)
    eval_rng = np.random.default_rng(eval_seq)
    buffer = ReplayBuffer(cfg.training.capacity, spec.obs_dim, spec.action_dim)
    t = cfg.training
    result = ExperimentResult(agent=agent, buffer=buffer)
    start = time.perf_counter()

    for episode in range(1, t.episodes + 1):
        try:
            rec = run_episode(spec, agent, buffer, plan_rng, (cfg.seed, 0, episode))
            losses: LossSummary = {}
            if episode % t.train_every == 0:
                losses = agent.train(buffer, train_rng)
            eval_return = None
            if episode % t.eval_every == 0:
                evals = [
                    run_episode(spec, agent, None, eval_rng, (cfg.seed, 1, episode, i), evaluate=True).episode_return
                    for i in range(t.eval_episodes)
                ]
                eval_return = float(np.mean(evals))
        except Exception as exc:
            raise RuntimeError(f"episode {episode} failed: {exc}") from exc
        row = ResultRow(
            episode=episode,
            train_return=rec.episode_return,
            episode_length=rec.length,
            eval_return=eval_return,
            dynamics_loss=_mean_or_none(losses.get("dynamics")),
            critic_loss=_mean_or_none(losses.get("critic")),
            actor_loss=_mean_or_none(losses.get("actor")),
            mean_plan_time_s=rec.mean_plan_time_s,
            wall_time_s=time.perf_counter() - start,
        )
        result.rows.append(row)
        log.info(
            "episode %d return %.1f length %d eval %s", episode, rec.episode_return, rec.length,
            "-" if eval_return is None else f"{eval_return:.1f}",
        )
        if on_row is not None:
            on_row(row)
        if stop_when is not None and stop_when(result.rows):
            break
    return result
