"""Exception types shared across the package."""


class UMLearnError(Exception):
    """Base class for package errors."""


class DegenerateStateError(UMLearnError, ValueError):
    """A hyperparameter state lost positive definiteness or finiteness."""


class ModelSupportError(UMLearnError, ValueError):
    """An observation fell outside the support of an exact likelihood."""


class ConfigError(UMLearnError, ValueError):
    """An experiment, network or grid description is invalid."""
