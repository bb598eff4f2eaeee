"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
data/file problems (3) and numerical failures (4).
"""


class NkmleError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(NkmleError):
    pass


class DataError(NkmleError):
    pass


class NumericalError(NkmleError):
    pass


class DimensionMismatch(NkmleError, ValueError):
    pass


# numerical
class NonPositivePivot(NumericalError):
    """Cholesky factorization met a pivot <= 0; the matrix is not SPD."""


class NonFiniteLoss(NumericalError):
    pass


# config
class UnknownKey(ConfigError):
    pass


class MissingRequiredKey(ConfigError):
    pass


class BadValue(ConfigError):
    pass


# data
class EmptyBatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class StaleCache(DataError):
    pass


class LengthMismatch(DataError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class CountMismatch(DataError):
    pass
