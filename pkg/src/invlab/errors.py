"""Exception hierarchy shared by every module."""


class InvLabError(Exception):
    """Base class for all library errors."""


class ConfigError(InvLabError, ValueError):
    """Invalid configuration value; the message names the offending field."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")

    def under(self, prefix):
        """Same error with the field qualified by a config path prefix."""
        return ConfigError(f"{prefix}.{self.field}", self.message)


class DimensionError(InvLabError, ValueError):
    pass


class StepError(InvLabError, IndexError):
    pass


class MetricError(InvLabError, ValueError):
    pass
