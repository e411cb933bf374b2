"""Path-integral planning over a learned model.

:func:`critic_pi2_plan` optimizes the first action of an imagined rollout.
Each iteration samples ``K`` first actions around the current mean, rolls them
through the dynamics model (later actions come from the actor), scores the
rollouts, and moves the mean to the softmax-weighted average of the samples.
Scores bootstrap from the critic after ``H`` imagined steps, or are plain
discounted reward sums in ``monte_carlo`` mode.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .actor_critic import Critic, train_actor_imitation
from .dynamics import DynamicsModel, Rollout, RolloutBatch, imagine_rollouts
from .envs import RewardFn
from .nn import GaussianPolicyHead

RETURN_MODES = ("critic_bootstrap", "monte_carlo")
BASELINE_MODES = ("vanilla_pi2", "mpc_random_shooting")


@dataclass(frozen=True)
class PlannerConfig:
    K: int = 50
    M: int = 10
    H: int = 1
    lam: float = 0.3
    sigma_plan: float = 0.3
    return_mode: str = "critic_bootstrap"
    greedy: bool = True
    inner_actor_update: bool = True
    baseline_H: int = 50
    # Rollouts are scored in fixed chunks of this size (0 means one chunk of
    # K); chunks may run on ``workers`` threads without changing any result.
    chunk_size: int = 0
    workers: int = 1

    def __post_init__(self):
        checks = [
            (self.K >= 2, "K must be >= 2"),
            (self.M >= 1, "M must be >= 1"),
            (self.H >= 1, "H must be >= 1"),
            (self.baseline_H >= 1, "baseline_H must be >= 1"),
            (self.lam > 0, "lambda must be > 0"),
            (self.sigma_plan >= 0, "sigma_plan must be >= 0"),
            (self.return_mode in RETURN_MODES, f"return_mode must be one of {RETURN_MODES}"),
            (self.chunk_size >= 0, "chunk_size must be >= 0"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)


@dataclass(frozen=True)
class PlanResult:
    expert_action: np.ndarray
    estimated_return: float
    iterations_used: int
    per_iteration_best: tuple[float, ...]
    actor: GaussianPolicyHead | None = None
    diverged: bool = False
    final_mean: np.ndarray | None = None
    final_mean_return: float = float("nan")
    sampled_actions: np.ndarray | None = None  # (M, K, action_dim)
    sampled_returns: np.ndarray | None = None  # (M, K)
    actor_losses: tuple[float, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Path-integral primitives
# ---------------------------------------------------------------------------


def normalize_costs(costs) -> np.ndarray:
    """Affine map of path costs onto ``[0, 1]``; a flat cost vector maps to zeros."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("costs must be non-empty")
    if not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite")
    lo, hi = costs.min(), costs.max()
    if hi == lo:
        return np.zeros_like(costs)
    return (costs - lo) / (hi - lo)


def pi2_weights(normalized_costs, lam: float) -> np.ndarray:
    """Softmax of ``-S / lam``."""
    s = np.asarray(normalized_costs, dtype=float)
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    logits = -s / lam
    logits = logits - logits.max()
    w = np.exp(logits)
    return w / w.sum()


def pi2_update(actions, weights) -> np.ndarray:
    actions = np.asarray(actions, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if actions.ndim == 1:
        actions = actions[:, None]
    if actions.shape[0] != weights.shape[0]:
        raise ValueError(f"{actions.shape[0]} actions but {weights.shape[0]} weights")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    return weights @ actions


def rollout_returns(batch: RolloutBatch, critic: Critic | None, mode: str, gamma: float) -> np.ndarray:
    """Discounted reward sums, bootstrapped from the critic in ``critic_bootstrap`` mode."""
    horizon = batch.rewards.shape[1]
    returns = batch.rewards @ (gamma ** np.arange(horizon))
    if mode == "critic_bootstrap":
        if critic is None:
            raise ValueError("critic_bootstrap mode needs a critic")
        live = ~(batch.terminated | batch.diverged)
        if live.any():
            values = np.zeros(len(batch))
            values[live] = critic.value(batch.observations[live, -1])
            returns = returns + gamma**horizon * values
    elif mode != "monte_carlo":
        raise ValueError(f"unknown return mode {mode!r}")
    return returns


def evaluate_rollout_return(rollout: Rollout, critic: Critic | None, mode: str, gamma: float) -> float:
    batch = RolloutBatch(
        rollout.observations[None],
        rollout.actions[None],
        rollout.rewards[None],
        rollout.behavior_log_probs[None],
        np.array([rollout.terminated]),
        np.array([rollout.diverged]),
    )
    return float(rollout_returns(batch, critic, mode, gamma)[0])


@lru_cache(maxsize=None)
def _pool(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="rollout")


def _score(
    cfg: PlannerConfig,
    horizon: int,
    mode: str,
    obs,
    first_actions,
    noise,
    later_actions,
    actor,
    critic,
    dynamics,
    reward_fn,
    bounds,
    gamma,
    divergence_reward,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(returns, diverged)`` for every candidate, in sample order."""
    k = first_actions.shape[0]
    size = cfg.chunk_size or k
    spans = [(i, min(i + size, k)) for i in range(0, k, size)]

    def run(span):
        a, b = span
        batch = imagine_rollouts(
            dynamics,
            actor,
            reward_fn,
            obs,
            first_actions[a:b],
            horizon,
            bounds,
            noise=None if noise is None else noise[a:b],
            later_actions=None if later_actions is None else later_actions[a:b],
            divergence_reward=divergence_reward,
            log_probs=False,
        )
        return rollout_returns(batch, critic, mode, gamma), batch.diverged

    if cfg.workers > 1 and len(spans) > 1:
        parts = list(_pool(cfg.workers).map(run, spans))
    else:
        parts = [run(s) for s in spans]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ---------------------------------------------------------------------------
# Planners
# ---------------------------------------------------------------------------


def critic_pi2_plan(
    obs,
    actor: GaussianPolicyHead,
    critic: Critic | None,
    dynamics: DynamicsModel,
    reward_fn: RewardFn,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    bounds: tuple[np.ndarray, np.ndarray],
    gamma: float = 0.99,
    divergence_reward: float = 0.0,
    actor_lr: float = 3e-4,
) -> PlanResult:
    """Plans one expert action from ``obs``.

    After the ``M`` iterations the final mean is scored as well, so with
    ``greedy`` on the expert action is the best of every scored candidate
    (sampled actions first, earliest wins ties) and never scores below the
    final mean. With ``greedy`` off it is the final mean.
    """
    obs = np.asarray(obs, dtype=float)
    low, high = bounds
    adim = low.shape[0]
    h = cfg.H
    mean = np.clip(actor.mean(obs), low, high)
    initial_mean = mean.copy()

    best_action, best_return = None, -np.inf
    per_iteration_best = []
    sampled_actions = np.empty((cfg.M, cfg.K, adim))
    sampled_returns = np.empty((cfg.M, cfg.K))
    actor_losses = []
    any_finite = False

    def score(first, noise):
        return _score(cfg, h, cfg.return_mode, obs, first, noise, None, actor, critic,
                      dynamics, reward_fn, bounds, gamma, divergence_reward)

    for m in range(cfg.M):
        eps = rng.standard_normal((cfg.K, adim))
        noise = rng.standard_normal((cfg.K, h - 1, adim)) if h > 1 else None
        candidates = np.clip(mean + cfg.sigma_plan * eps, low, high)
        returns, diverged = score(candidates, noise)
        any_finite |= not diverged.all()
        sampled_actions[m] = candidates
        sampled_returns[m] = returns

        weights = pi2_weights(normalize_costs(-returns), cfg.lam)
        mean = np.clip(pi2_update(candidates, weights), low, high)

        i = int(np.argmax(returns))
        if returns[i] > best_return:
            best_action, best_return = candidates[i].copy(), float(returns[i])
        per_iteration_best.append(best_return if cfg.greedy else float(returns[i]))

        if cfg.inner_actor_update:
            target = best_action if cfg.greedy else mean
            actor, loss = train_actor_imitation(actor, obs[None], target[None], actor_lr)
            actor_losses.append(loss)

    if not any_finite:
        return PlanResult(
            expert_action=initial_mean,
            estimated_return=float("nan"),
            iterations_used=cfg.M,
            per_iteration_best=tuple(per_iteration_best),
            actor=actor,
            diverged=True,
            sampled_actions=sampled_actions,
            sampled_returns=sampled_returns,
            actor_losses=tuple(actor_losses),
        )

    noise = rng.standard_normal((1, h - 1, adim)) if h > 1 else None
    mean_return = float(score(mean[None], noise)[0][0])
    if not cfg.greedy:
        expert, estimate = mean, mean_return
    elif mean_return > best_return:
        expert, estimate = mean, mean_return
    else:
        expert, estimate = best_action, best_return
    return PlanResult(
        expert_action=np.asarray(expert, dtype=float).copy(),
        estimated_return=estimate,
        iterations_used=cfg.M,
        per_iteration_best=tuple(per_iteration_best),
        actor=actor,
        final_mean=mean,
        final_mean_return=mean_return,
        sampled_actions=sampled_actions,
        sampled_returns=sampled_returns,
        actor_losses=tuple(actor_losses),
    )


def vanilla_pi2_config(cfg: PlannerConfig) -> PlannerConfig:
    return dataclasses.replace(
        cfg, H=cfg.baseline_H, return_mode="monte_carlo", greedy=False, inner_actor_update=False
    )


def baseline_plan(
    obs,
    actor: GaussianPolicyHead | None,
    dynamics: DynamicsModel,
    reward_fn: RewardFn,
    cfg: PlannerConfig,
    mode: str,
    rng: np.random.Generator,
    bounds: tuple[np.ndarray, np.ndarray],
    gamma: float = 0.99,
    divergence_reward: float = 0.0,
) -> PlanResult:
    """Vanilla PI2 (no critic, no greedy memory) or MPC random shooting.

    Both use ``cfg.baseline_H`` as the horizon. Random shooting draws ``K * M``
    uniform action sequences in one batch, the same rollout budget as ``M``
    PI2 iterations, and returns the first action of the best one.
    """
    if mode == "vanilla_pi2":
        return critic_pi2_plan(
            obs, actor, None, dynamics, reward_fn, vanilla_pi2_config(cfg), rng, bounds,
            gamma=gamma, divergence_reward=divergence_reward,
        )
    if mode != "mpc_random_shooting":
        raise ValueError(f"unknown baseline {mode!r}; expected one of {BASELINE_MODES}")

    return random_shooting_plan(
        obs, dynamics, reward_fn, cfg.K * cfg.M, cfg.baseline_H, rng, bounds,
        gamma=gamma, divergence_reward=divergence_reward, cfg=cfg,
    )


def random_shooting_plan(
    obs,
    dynamics: DynamicsModel,
    reward_fn: RewardFn,
    n_samples: int,
    horizon: int,
    rng: np.random.Generator,
    bounds: tuple[np.ndarray, np.ndarray],
    gamma: float = 0.99,
    divergence_reward: float = 0.0,
    cfg: PlannerConfig | None = None,
) -> PlanResult:
    """First action of the best of ``n_samples`` uniform action sequences."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cfg = cfg or PlannerConfig()
    obs = np.asarray(obs, dtype=float)
    low, high = bounds
    seqs = rng.uniform(low, high, size=(n_samples, horizon, low.shape[0]))
    returns, diverged = _score(
        cfg, horizon, "monte_carlo", obs, seqs[:, 0], None, seqs[:, 1:], None, None,
        dynamics, reward_fn, bounds, gamma, divergence_reward,
    )
    i = int(np.argmax(returns))
    return PlanResult(
        expert_action=seqs[i, 0].copy(),
        estimated_return=float(returns[i]),
        iterations_used=1,
        per_iteration_best=(float(returns[i]),),
        diverged=bool(diverged.all()),
        sampled_actions=seqs[None, :, 0],
        sampled_returns=returns[None],
    )
