"""Exception hierarchy shared by the engine and the CLI."""


class MedaError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ShapeError(MedaError, ValueError):
    """Array shapes do not line up."""

    exit_code = 3


class ContractError(MedaError, ValueError):
    """An input violates an operation's precondition."""

    exit_code = 4


class ConfigError(MedaError, ValueError):
    """Invalid configuration value or config file."""

    exit_code = 5


class TraceError(MedaError):
    """Base class for trace file load failures."""

    exit_code = 6


class TraceVersionError(TraceError):
    exit_code = 7


class TraceTruncatedError(TraceError):
    exit_code = 8


class TraceShapeError(TraceError, ShapeError):
    exit_code = 9
