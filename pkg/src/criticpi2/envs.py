"""Analytic cart-pole and cart-double-pendulum benchmark environments.

Both systems are rigid bodies on a frictionless rail, written in generalized
coordinates ``q`` (cart position first, then pole angles measured from the
upright vertical) and integrated with semi-implicit Euler. Rewards, termination
predicates and observation layouts follow the Gym ``InvertedPendulum`` and
``InvertedDoublePendulum`` tasks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

INVERTED_PENDULUM = "InvertedPendulum"
INVERTED_DOUBLE_PENDULUM = "InvertedDoublePendulum"
ENV_NAMES = (INVERTED_PENDULUM, INVERTED_DOUBLE_PENDULUM)

# Reward weights of the double pendulum task.
IDP_ALIVE_BONUS = 10.0
IDP_TARGET_HEIGHT = 2.0


@dataclass(frozen=True)
class Physics:
    """Physical constants shared by both systems.

    Poles are uniform rods. ``pole_lengths`` holds the full length of each
    pole, so the double pendulum's tip sits at ``sum(pole_lengths)`` when
    upright. ``force_scale`` converts an action into Newtons.
    """

    gravity: float = 9.81
    cart_mass: float = 1.0
    pole_masses: tuple[float, ...] = (0.1,)
    pole_lengths: tuple[float, ...] = (1.0,)
    force_scale: float = 1.0
    damping: float = 0.0
    substeps: int = 10


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_low: float
    action_high: float
    steps_per_epoch: int = 500
    dt: float = 0.02
    physics: Physics = field(default_factory=Physics)
    reset_scale: float = 0.01

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.name!r}")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be < action_high")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.physics.substeps < 1:
            raise ValueError("physics.substeps must be >= 1")
        n_poles = 1 if self.name == INVERTED_PENDULUM else 2
        if len(self.physics.pole_masses) != n_poles or len(self.physics.pole_lengths) != n_poles:
            raise ValueError(f"{self.name} needs {n_poles} pole masses and lengths")

    @property
    def action_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        low = np.full(self.action_dim, self.action_low)
        high = np.full(self.action_dim, self.action_high)
        return low, high

    @property
    def half_range(self) -> float:
        return 0.5 * (self.action_high - self.action_low)


def make_spec(name: str, **overrides) -> EnvSpec:
    """Default spec for ``name``; keyword overrides replace spec fields."""
    if name == INVERTED_PENDULUM:
        base = dict(
            name=name,
            obs_dim=4,
            action_dim=1,
            action_low=-3.0,
            action_high=3.0,
            physics=Physics(pole_masses=(0.1,), pole_lengths=(1.0,), force_scale=1.0),
        )
    elif name == INVERTED_DOUBLE_PENDULUM:
        base = dict(
            name=name,
            obs_dim=11,
            action_dim=1,
            action_low=-1.0,
            action_high=1.0,
            physics=Physics(pole_masses=(0.1, 0.1), pole_lengths=(1.0, 1.0), force_scale=5.0),
        )
    else:
        raise ValueError(f"unknown environment {name!r}")
    base.update(overrides)
    return EnvSpec(**base)


@dataclass(frozen=True)
class EnvState:
    q: np.ndarray
    qd: np.ndarray
    step_count: int = 0


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    diverged: bool = False


# ---------------------------------------------------------------------------
# Equations of motion
# ---------------------------------------------------------------------------


def _mass_matrix_and_rhs(spec: EnvSpec, q: np.ndarray, qd: np.ndarray, force: float):
    p = spec.physics
    g = p.gravity
    if spec.name == INVERTED_PENDULUM:
        m = p.pole_masses[0]
        a = 0.5 * p.pole_lengths[0]
        th, thd = q[1], qd[1]
        s, c = np.sin(th), np.cos(th)
        mass = np.array(
            [
                [p.cart_mass + m, m * a * c],
                [m * a * c, (4.0 / 3.0) * m * a * a],
            ]
        )
        rhs = np.array(
            [
                force + m * a * s * thd * thd - p.damping * qd[0],
                m * g * a * s - p.damping * thd,
            ]
        )
        return mass, rhs

    m1, m2 = p.pole_masses
    l1, l2 = p.pole_lengths
    a1, a2 = 0.5 * l1, 0.5 * l2
    th1, th2 = q[1], q[2]
    w1, w2 = qd[1], qd[2]
    s1, c1, s2, c2 = np.sin(th1), np.cos(th1), np.sin(th2), np.cos(th2)
    s12, c12 = np.sin(th1 - th2), np.cos(th1 - th2)
    h1 = m1 * a1 + m2 * l1
    mass = np.array(
        [
            [p.cart_mass + m1 + m2, h1 * c1, m2 * a2 * c2],
            [h1 * c1, m1 * a1 * a1 / 3.0 + m1 * a1 * a1 + m2 * l1 * l1, m2 * l1 * a2 * c12],
            [m2 * a2 * c2, m2 * l1 * a2 * c12, (4.0 / 3.0) * m2 * a2 * a2],
        ]
    )
    rhs = np.array(
        [
            force + h1 * s1 * w1 * w1 + m2 * a2 * s2 * w2 * w2 - p.damping * qd[0],
            -m2 * l1 * a2 * s12 * w2 * w2 + g * h1 * s1 - p.damping * w1,
            m2 * l1 * a2 * s12 * w1 * w1 + g * m2 * a2 * s2 - p.damping * w2,
        ]
    )
    return mass, rhs


def accelerations(spec: EnvSpec, q: np.ndarray, qd: np.ndarray, force: float) -> np.ndarray:
    """Generalized accelerations for a force (N) applied to the cart."""
    mass, rhs = _mass_matrix_and_rhs(spec, q, qd, force)
    return np.linalg.solve(mass, rhs)


def mechanical_energy(spec: EnvSpec, state: EnvState) -> float:
    """Kinetic plus potential energy, with the cart at height zero."""
    p = spec.physics
    q, qd = state.q, state.qd
    mass, _ = _mass_matrix_and_rhs(spec, q, qd, 0.0)
    kinetic = 0.5 * qd @ mass @ qd
    height = 0.0
    potential = 0.0
    for i, (m, length) in enumerate(zip(p.pole_masses, p.pole_lengths)):
        c = np.cos(q[1 + i])
        potential += m * p.gravity * (height + 0.5 * length * c)
        height += length * c
    return float(kinetic + potential)


# ---------------------------------------------------------------------------
# Observation, reward, termination
# ---------------------------------------------------------------------------


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    q, qd = state.q, state.qd
    if spec.name == INVERTED_PENDULUM:
        return np.array([q[0], q[1], qd[0], qd[1]])
    # Constraint-force slots are always zero: there is no constraint solver.
    return np.array(
        [
            q[0],
            np.sin(q[1]),
            np.sin(q[2]),
            np.cos(q[1]),
            np.cos(q[2]),
            qd[0],
            qd[1],
            qd[2],
            0.0,
            0.0,
            0.0,
        ]
    )


def tip_height(spec: EnvSpec, obs: np.ndarray) -> np.ndarray:
    """Height of the second pole's tip above the rail, from observations."""
    l1, l2 = spec.physics.pole_lengths
    return l1 * obs[..., 3] + l2 * obs[..., 4]


def tip_height_rate(spec: EnvSpec, obs: np.ndarray) -> np.ndarray:
    l1, l2 = spec.physics.pole_lengths
    return -l1 * obs[..., 1] * obs[..., 6] - l2 * obs[..., 2] * obs[..., 7]


def reward(spec: EnvSpec, obs: np.ndarray) -> np.ndarray:
    """Reward of the transition that produced ``obs`` (post-step observation).

    Works on a single observation or a batch along the leading axes.
    """
    obs = np.asarray(obs, dtype=float)
    if spec.name == INVERTED_PENDULUM:
        return np.ones(obs.shape[:-1])
    x1 = obs[..., 0]
    x1_dot = obs[..., 5]
    x2 = tip_height(spec, obs)
    x2_dot = tip_height_rate(spec, obs)
    return (
        IDP_ALIVE_BONUS
        - 0.01 * x1**2
        - (x2 - IDP_TARGET_HEIGHT) ** 2
        - 1e-3 * x1_dot**2
        - 5e-3 * x2_dot**2
    )


def max_reward(spec: EnvSpec) -> float:
    """Largest per-step reward the environment can pay."""
    return 1.0 if spec.name == INVERTED_PENDULUM else IDP_ALIVE_BONUS


def is_terminal(spec: EnvSpec, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if spec.name == INVERTED_PENDULUM:
        return np.abs(obs[..., 1]) >= 0.2
    return tip_height(spec, obs) <= 1.0


RewardFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def make_reward_fn(spec: EnvSpec) -> RewardFn:
    """Returns ``fn(next_obs) -> (rewards, terminated)`` for imagined states."""

    def fn(next_obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return reward(spec, next_obs), is_terminal(spec, next_obs)

    return fn


# ---------------------------------------------------------------------------
# reset / step
# ---------------------------------------------------------------------------


def reset(spec: EnvSpec, seed, scale: float | None = None) -> tuple[EnvState, np.ndarray]:
    """Upright state with a uniform perturbation on every coordinate."""
    rng = np.random.default_rng(seed)
    scale = spec.reset_scale if scale is None else scale
    n = 2 if spec.name == INVERTED_PENDULUM else 3
    q = rng.uniform(-scale, scale, size=n)
    qd = rng.uniform(-scale, scale, size=n)
    state = EnvState(q=q, qd=qd, step_count=0)
    return state, observe(spec, state)


def step(state: EnvState, action, spec: EnvSpec) -> tuple[EnvState, StepResult]:
    action = np.asarray(action, dtype=float).reshape(spec.action_dim)
    if not np.all(np.isfinite(action)):
        raise ValueError("action must be finite")
    if state.step_count >= spec.steps_per_epoch:
        raise RuntimeError("episode already reached its step limit")
    action = np.clip(action, spec.action_low, spec.action_high)
    force = float(action[0]) * spec.physics.force_scale

    q, qd = state.q.copy(), state.qd.copy()
    h = spec.dt / spec.physics.substeps
    with np.errstate(all="ignore"):  # blow-up is detected below
        for _ in range(spec.physics.substeps):
            qd = qd + h * accelerations(spec, q, qd, force)
            q = q + h * qd

    count = state.step_count + 1
    truncated_limit = count >= spec.steps_per_epoch
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        # Integrator blow-up: keep the last finite state and end the episode.
        frozen = dataclasses.replace(state, step_count=count)
        obs = observe(spec, state)
        return frozen, StepResult(obs, float(reward(spec, obs)), True, False, diverged=True)

    new_state = EnvState(q=q, qd=qd, step_count=count)
    obs = observe(spec, new_state)
    terminated = bool(is_terminal(spec, obs))
    return new_state, StepResult(
        observation=obs,
        reward=float(reward(spec, obs)),
        terminated=terminated,
        truncated=truncated_limit and not terminated,
    )


class Env:
    """Stateful convenience wrapper around :func:`reset` and :func:`step`."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state: EnvState | None = None
        self.done = True

    def reset(self, seed) -> np.ndarray:
        self.state, obs = reset(self.spec, seed)
        self.done = False
        return obs

    def step(self, action) -> StepResult:
        if self.state is None or self.done:
            raise RuntimeError("call reset() before step()")
        self.state, result = step(self.state, action, self.spec)
        self.done = result.terminated or result.truncated
        return result
