"""Exception types raised across the package."""


class DomainError(ValueError):
    """An input lies outside the domain where a model is defined."""


class ConfigError(ValueError):
    """A configuration is inconsistent, incomplete or malformed."""


class UsageError(RuntimeError):
    """An object was used out of order (e.g. stepping a finished episode)."""


class DivergenceError(FloatingPointError):
    """Training or optimization produced non-finite numbers."""
