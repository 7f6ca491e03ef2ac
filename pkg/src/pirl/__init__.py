"""Integral-of-error rewards for RL control: plants, rewards, DDPG, baseline and harness."""
from .errors import ConfigError, DivergenceError, DomainError, UsageError

__all__ = ["ConfigError", "DivergenceError", "DomainError", "UsageError"]
