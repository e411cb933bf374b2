"""Critic PI2: model-based RL with a short-horizon PI2 planner bootstrapped by a learned critic."""

from .config import ConfigError, ExperimentConfig, parse_config
from .planner import PlannerConfig, PlanResult, critic_pi2_plan, normalize_costs, pi2_update, pi2_weights
from .trainer import run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PlanResult",
    "PlannerConfig",
    "critic_pi2_plan",
    "normalize_costs",
    "parse_config",
    "pi2_update",
    "pi2_weights",
    "run_experiment",
]

__version__ = "0.1.0"
