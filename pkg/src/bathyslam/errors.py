"""Exception types shared across the package."""


class BathySlamError(Exception):
    """Base class for runtime failures raised by this package."""


class ConfigError(BathySlamError):
    """Invalid configuration or generation parameters (CLI exit code 2)."""
