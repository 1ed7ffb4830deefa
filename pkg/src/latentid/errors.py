"""Exception hierarchy shared by every stage of the identification pipeline."""


class LatentIdError(Exception):
    """Base class for all library errors."""

    #: process exit code used by the CLI
    exit_code = 1


class ArgumentError(LatentIdError, ValueError):
    exit_code = 4


class DimensionError(ArgumentError):
    pass


class SpecError(LatentIdError, ValueError):
    exit_code = 4


class UnsupportedSpecError(SpecError):
    pass


class ConfigError(LatentIdError):
    exit_code = 4


class IdentifiabilityError(LatentIdError):
    """An identification condition fails (rank inequality, vanishing skewness...)."""

    exit_code = 2

    def __init__(self, message, margin=None, report=None):
        super().__init__(message)
        self.margin = margin
        self.report = report


class AssumptionError(IdentifiabilityError):
    pass


class DegeneracyError(LatentIdError, ArithmeticError):
    """Numerical degeneracy: eigenvalue collision, missing pivot, vanishing factor."""

    exit_code = 3


class RankError(DegeneracyError):
    pass


class ContradictionError(DegeneracyError):
    pass


class RangeError(LatentIdError, ValueError):
    """A requested evaluation point lies outside a grid's covered range."""

    exit_code = 3


class TruncationWarning(UserWarning):
    """Characteristic-function denominator fell below the modulus floor."""


class ConditioningWarning(UserWarning):
    """A measurement pair is nearly orthogonal to the factor it should measure."""
