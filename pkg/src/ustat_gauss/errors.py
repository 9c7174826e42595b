"""Exception hierarchy shared by every module."""


class UstatError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UstatError, ValueError):
    """Invalid scenario, kernel or experiment configuration."""


class UsageError(UstatError, ValueError):
    """An operation was called outside its preconditions."""


class DomainError(UsageError):
    """A scalar parameter is outside its mathematical domain."""


class NumericalError(UstatError, ArithmeticError):
    """Non-finite values or a divergent estimate."""


class DegeneracyError(NumericalError):
    """A statistic has (numerically) zero variance."""


class SingularityError(NumericalError):
    """A linear system is rank deficient or too ill-conditioned."""
