"""Experiment configuration: nested frozen dataclasses loaded from JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from . import envs
from .actor_critic import VtraceConfig
from .planner import PlannerConfig

AGENTS = ("critic_pi2", "vanilla_pi2", "mpc", "ddpg", "random")

# JSON keys that differ from the dataclass field they fill.
KEY_ALIASES = {"lambda": "lam"}
FIELD_ALIASES = {v: k for k, v in KEY_ALIASES.items()}


class ConfigError(ValueError):
    """Invalid configuration: unknown keys, bad values or unreadable files."""


@dataclass(frozen=True)
class EnvConfig:
    """Environment choice plus optional overrides of its physical constants.

    ``None`` keeps the environment's built-in default.
    """

    name: str = envs.INVERTED_PENDULUM
    dt: float | None = None
    steps_per_epoch: int | None = None
    action_low: float | None = None
    action_high: float | None = None
    reset_scale: float | None = None
    gravity: float | None = None
    cart_mass: float | None = None
    pole_masses: tuple[float, ...] | None = None
    pole_lengths: tuple[float, ...] | None = None
    force_scale: float | None = None
    damping: float | None = None
    substeps: int | None = None

    def build(self) -> envs.EnvSpec:
        base = envs.make_spec(self.name)
        physics_fields = {f.name for f in dataclasses.fields(envs.Physics)}
        spec_over, phys_over = {}, {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "name" or value is None:
                continue
            if f.name in physics_fields:
                phys_over[f.name] = tuple(value) if isinstance(value, list) else value
            else:
                spec_over[f.name] = value
        physics = dataclasses.replace(base.physics, **phys_over)
        return dataclasses.replace(base, physics=physics, **spec_over)


@dataclass(frozen=True)
class NetworkConfig:
    hidden: tuple[int, ...] = (64, 64)
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    dynamics_lr: float = 1e-3
    # Policy standard deviation as a fraction of the action half-range.
    policy_sigma: float = 0.3
    # Critic output unit, in multiples of the largest per-step reward.
    critic_value_steps: float = 10.0

    def __post_init__(self):
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        for name in ("actor_lr", "critic_lr", "dynamics_lr", "policy_sigma", "critic_value_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 100
    epochs: int = 100
    train_every: int = 2
    eval_every: int = 2
    eval_episodes: int = 3
    batch_size: int = 256
    capacity: int = 100_000
    ddpg_epoch_multiplier: int = 10
    ddpg_noise: float = 0.1
    ddpg_tau: float = 0.005

    def __post_init__(self):
        if self.episodes < 0 or self.epochs < 0:
            raise ValueError("episodes and epochs must be >= 0")
        for name in ("train_every", "eval_every", "eval_episodes", "batch_size", "capacity", "ddpg_epoch_multiplier"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.ddpg_tau <= 1.0:
            raise ValueError("ddpg_tau must lie in [0, 1]")
        if self.ddpg_noise < 0:
            raise ValueError("ddpg_noise must be >= 0")


@dataclass(frozen=True)
class AblationConfig:
    no_critic: bool = False
    no_greedy: bool = False
    no_actor_training: bool = False

    @property
    def any(self) -> bool:
        return self.no_critic or self.no_greedy or self.no_actor_training


@dataclass(frozen=True)
class ExperimentConfig:
    agent: str = "critic_pi2"
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    vtrace: VtraceConfig = field(default_factory=VtraceConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"agent must be one of {AGENTS}")
        if self.ablation.any and self.agent != "critic_pi2":
            raise ValueError("ablation switches are only valid for the critic_pi2 agent")

    def effective_planner(self) -> PlannerConfig:
        """Planner settings after ablation switches are applied."""
        p = self.planner
        if self.ablation.no_critic:
            p = dataclasses.replace(p, return_mode="monte_carlo", H=p.baseline_H)
        if self.ablation.no_greedy:
            p = dataclasses.replace(p, greedy=False)
        return p


_SECTIONS = {
    "env": EnvConfig,
    "planner": PlannerConfig,
    "networks": NetworkConfig,
    "vtrace": VtraceConfig,
    "training": TrainingConfig,
    "ablation": AblationConfig,
}


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """JSON-ready nested dict, using the external key names."""

    def section(obj):
        out = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[FIELD_ALIASES.get(f.name, f.name)] = value
        return out

    data: dict[str, Any] = {"agent": cfg.agent, "seed": cfg.seed}
    for name in _SECTIONS:
        data[name] = section(getattr(cfg, name))
    return data


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, _, raw = item.partition("=")
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r}: {part!r} is not a section")
    node[parts[-1]] = _parse_value(raw.strip())


def _coerce(value, annotation: str):
    if isinstance(value, list) and "tuple" in annotation:
        return tuple(value)
    return value


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Builds a validated config; unknown keys and bad values raise ConfigError."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(data) - {"agent", "seed", *_SECTIONS})
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be an object")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            field_name = KEY_ALIASES.get(key, key)
            if field_name not in fields:
                unknown.append(f"{name}.{key}")
                continue
            kwargs[field_name] = _coerce(value, str(fields[field_name].type))
        sections[name] = (cls, kwargs)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    built = {}
    for name, (cls, kwargs) in sections.items():
        try:
            built[name] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid {name} config: {exc}") from exc
    try:
        cfg = ExperimentConfig(agent=data.get("agent", "critic_pi2"), seed=int(data.get("seed", 0)), **built)
        cfg.env.build()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def parse_config(path: str | Path | None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Loads ``path`` (JSON; an empty file means all defaults), then applies ``key=value`` overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if text.strip():
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    for item in overrides:
        apply_override(data, item)
    return from_dict(data)
