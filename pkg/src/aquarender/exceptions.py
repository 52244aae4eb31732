"""Exception types shared across the package."""


class AquarenderError(Exception):
    """Base class for every error raised by this package."""


class ContractViolationError(AquarenderError, ValueError):
    """An input violates a documented contract (shape, range, or pairing)."""


class InvalidParameterError(AquarenderError, ValueError):
    """A model or configuration parameter lies outside its valid domain."""


class UnderConstrainedError(AquarenderError, RuntimeError):
    """The data does not constrain the parameters being estimated."""


class TrainingDivergenceError(AquarenderError, RuntimeError):
    """Training produced a non-finite loss or non-finite weights.

    ``state`` carries a diagnostic snapshot (step counters, offending
    values) for post-mortem inspection.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = dict(state or {})


class AmbiguityError(AquarenderError, ValueError):
    """The inverse problem has no unique answer under the given model."""


class NormalizationError(AquarenderError, ValueError):
    """A zero color vector cannot be intensity-normalized."""


class ConfigError(AquarenderError, ValueError):
    """A run configuration is malformed or names an unknown key."""


class DataError(AquarenderError, ValueError):
    """A file, dataset, or manifest cannot be used."""
