"""Replay storage with episode boundaries and contiguous-window sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminated: bool
    behavior_log_prob: float


@dataclass(frozen=True)
class TransitionBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray
    behavior_log_probs: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    @classmethod
    def from_transitions(cls, transitions) -> "TransitionBatch":
        transitions = list(transitions)
        return cls(
            obs=np.array([t.obs for t in transitions], dtype=float),
            actions=np.array([np.atleast_1d(t.action) for t in transitions], dtype=float),
            rewards=np.array([t.reward for t in transitions], dtype=float),
            next_obs=np.array([t.next_obs for t in transitions], dtype=float),
            terminated=np.array([t.terminated for t in transitions], dtype=bool),
            behavior_log_probs=np.array([t.behavior_log_prob for t in transitions], dtype=float),
        )


@dataclass(frozen=True)
class SequenceBatch:
    """``count`` windows of up to ``n`` steps, padded on the right.

    ``mask[b, k]`` is true for real steps. Windows cut short by the end of
    their episode have ``lengths[b] < n`` (the flag for terminal-tail windows).
    """

    obs: np.ndarray  # (B, n, obs_dim)
    actions: np.ndarray  # (B, n, action_dim)
    rewards: np.ndarray  # (B, n)
    next_obs: np.ndarray  # (B, n, obs_dim)
    terminated: np.ndarray  # (B, n)
    behavior_log_probs: np.ndarray  # (B, n)
    mask: np.ndarray  # (B, n)
    lengths: np.ndarray  # (B,)

    @property
    def short(self) -> np.ndarray:
        return self.lengths < self.mask.shape[1]

    @classmethod
    def from_transitions(cls, transitions) -> "SequenceBatch":
        """A single window holding ``transitions`` in order."""
        b = TransitionBatch.from_transitions(transitions)
        n = len(b)
        return cls(
            obs=b.obs[None],
            actions=b.actions[None],
            rewards=b.rewards[None],
            next_obs=b.next_obs[None],
            terminated=b.terminated[None],
            behavior_log_probs=b.behavior_log_probs[None],
            mask=np.ones((1, n), dtype=bool),
            lengths=np.array([n]),
        )


class ReplayBuffer:
    """Ring buffer of transitions tagged with their episode id."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminated = np.zeros(capacity, dtype=bool)
        self.behavior_log_probs = np.zeros(capacity)
        self.episode_ids = np.full(capacity, -1, dtype=np.int64)
        self.step_ids = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self._head = 0
        self._episode = 0
        self._step = 0
        self.min_reward = np.inf

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        values = (t.obs, t.action, t.reward, t.next_obs, t.behavior_log_prob)
        if not all(np.all(np.isfinite(v)) for v in values):
            raise ValueError("refusing to store a non-finite transition")
        i = self._head
        self.obs[i] = t.obs
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.terminated[i] = t.terminated
        self.behavior_log_probs[i] = t.behavior_log_prob
        self.episode_ids[i] = self._episode
        self.step_ids[i] = self._step
        self._step += 1
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.min_reward = min(self.min_reward, float(t.reward))

    def end_episode(self) -> None:
        """Marks an episode boundary; later transitions start a new episode."""
        if self._step:
            self._episode += 1
            self._step = 0

    def sample(self, count: int, rng: np.random.Generator) -> TransitionBatch:
        if self.size == 0:
            raise InsufficientDataError("replay buffer is empty")
        idx = rng.integers(0, self.size, size=count)
        return self.batch(idx)

    def batch(self, idx) -> TransitionBatch:
        return TransitionBatch(
            obs=self.obs[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_obs=self.next_obs[idx],
            terminated=self.terminated[idx],
            behavior_log_probs=self.behavior_log_probs[idx],
        )

    def all(self) -> TransitionBatch:
        return self.batch(np.arange(self.size))


def sample_sequences(buffer: ReplayBuffer, count: int, n: int, rng: np.random.Generator) -> SequenceBatch:
    """Uniform within-episode windows of up to ``n`` consecutive transitions.

    Each window starts at a uniformly drawn stored transition and stops at
    ``n`` steps or at the end of its episode, whichever comes first.
    """
    if n < 1:
        raise ValueError("window length must be >= 1")
    if buffer.size == 0 or buffer.step_ids[: buffer.size].max() + 1 < n:
        raise InsufficientDataError(f"no stored episode holds a window of {n} steps")
    starts = rng.integers(0, buffer.size, size=count)
    cap = buffer.capacity
    # Positions k steps after each start; valid while the episode and step
    # counters continue without a gap (also rejects wrap into stale slots).
    offsets = np.arange(n)
    pos = (starts[:, None] + offsets[None, :]) % cap
    same_episode = buffer.episode_ids[pos] == buffer.episode_ids[starts][:, None]
    contiguous = buffer.step_ids[pos] == buffer.step_ids[starts][:, None] + offsets[None, :]
    in_store = (starts[:, None] + offsets[None, :] < buffer.size) | (buffer.size == cap)
    valid = same_episode & contiguous & in_store
    mask = np.cumprod(valid, axis=1).astype(bool)
    lengths = mask.sum(axis=1)

    def gather(arr):
        out = arr[pos]
        out[~mask] = 0
        return out

    return SequenceBatch(
        obs=gather(buffer.obs),
        actions=gather(buffer.actions),
        rewards=gather(buffer.rewards),
        next_obs=gather(buffer.next_obs),
        terminated=gather(buffer.terminated),
        behavior_log_probs=gather(buffer.behavior_log_probs),
        mask=mask,
        lengths=lengths,
    )
