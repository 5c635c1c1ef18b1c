"""Exception hierarchy shared across the toolkit.

The CLI maps these onto its exit codes: configuration problems exit 1,
data/IO problems exit 2, numeric failures exit 3.
"""


class AmsdbError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ShapeError(AmsdbError, ValueError):
    pass


class ParameterError(AmsdbError, ValueError):
    pass


class ContractError(AmsdbError, RuntimeError):
    pass


class ConfigError(AmsdbError, ValueError):
    pass


class CheckpointError(AmsdbError, ValueError):
    pass


class DataError(AmsdbError, IOError):
    exit_code = 2


class NumericError(AmsdbError, FloatingPointError):
    exit_code = 3
