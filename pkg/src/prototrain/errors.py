"""Exception types; the CLI maps them onto exit codes (2=config, 3=data, 4=runtime)."""


class PrototrainError(Exception):
    """Base class for package errors."""


class ConfigError(PrototrainError):
    """An invalid configuration value or combination."""


class DataError(PrototrainError):
    """A missing, malformed, or incompatible data artifact."""
