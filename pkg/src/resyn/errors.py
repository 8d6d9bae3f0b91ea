"""Exception hierarchy. The CLI maps each class to an exit code."""


class ResynError(Exception):
    exit_code = 1


class ConfigError(ResynError, ValueError):
    exit_code = 2


class DataError(ResynError, ValueError):
    exit_code = 3


class CapabilityError(ResynError, RuntimeError):
    """A backend lacks a capability the operation needs (gradients, dropout...)."""
    exit_code = 4
