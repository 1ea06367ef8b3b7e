"""Exception and warning classes raised across WindESN.

The CLI prints ``<ClassName>: <message>`` for any ``WindEsnError`` and exits
non-zero, so messages should be a single readable sentence.
"""


class WindEsnError(Exception):
    """Base class for all WindESN failures."""


class InvalidDataError(WindEsnError):
    """Input contains non-finite or otherwise unusable values."""


class DomainError(InvalidDataError):
    """A value lies outside the mathematical domain of an operation."""


class SchemaError(WindEsnError):
    """Shapes, locations or file layouts do not agree."""


class SingularDesignError(WindEsnError):
    """A regression design or linear system is rank deficient."""


class NumericError(WindEsnError):
    """A numerical routine failed (degenerate kernel, failed factorization)."""


class ConfigurationError(WindEsnError):
    """Configuration values are invalid or lead to an empty result."""


class InsufficientHistoryError(WindEsnError):
    """Not enough past observations to build the lagged inputs."""


class InsufficientDataError(WindEsnError):
    """Not enough samples to estimate the requested quantities."""


class FitFailureError(WindEsnError):
    """A model could not be fitted, even after fallbacks."""


class IntegrationFailureError(WindEsnError):
    """An ODE integration diverged."""


class WindEsnWarning(UserWarning):
    """Recoverable numerical issue (retry, fallback, truncation)."""
