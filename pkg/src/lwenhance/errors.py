"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions."""


class ConfigurationError(ValueError):
    """A configuration is inconsistent (missing coefficients, empty manifest, ...)."""


class CorruptFileError(IOError):
    """A weights or manifest file failed validation while loading."""


class GraphValidationError(ValueError):
    """A network graph is malformed or shapes disagree along an edge."""


class TrainingError(RuntimeError):
    """Training hit a non-recoverable state (non-finite loss, ...)."""
