"""Exception hierarchy shared by the library and the command line."""


class FeatlearnError(Exception):
    """Base class for all errors raised by featlearn."""

    exit_code = 1


class ConfigError(FeatlearnError, ValueError):
    """Invalid or inconsistent configuration / parameters."""

    exit_code = 2


class DataError(FeatlearnError, ValueError):
    """Input data that cannot be read or does not fit the requested operation."""

    exit_code = 3


class MalformedHeaderError(DataError):
    pass


class TruncatedPayloadError(DataError):
    pass


class ShapeError(DataError):
    """Array dimensions that do not chain (receptive field too large, channel mismatch...)."""


class NumericError(FeatlearnError, ArithmeticError):
    """Non-finite values or a degenerate numerical problem."""

    exit_code = 4
