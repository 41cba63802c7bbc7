"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for every error raised by fusionkit."""

    exit_code = 3


class SchemaError(FusionError):
    """Schema declaration is inconsistent or does not match the data."""

    exit_code = 2


class DataError(FusionError):
    """Input data violates a declared contract."""

    exit_code = 2


class RecodeError(DataError):
    pass


class RegressionError(FusionError):
    pass


class MatchingError(FusionError):
    pass


class SimulationAborted(FusionError):
    """Too many Monte Carlo replications failed."""
