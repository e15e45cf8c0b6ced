"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage/config problems exit 1, data and
validation problems exit 2, numeric failures exit 3.
"""


class TrajcastError(Exception):
    """Base class for all package errors."""


class ConfigError(TrajcastError, ValueError):
    """Invalid configuration or a contract between settings is violated."""


class ContractError(TrajcastError, RuntimeError):
    """A caller broke an operation's precondition."""


class DimensionError(TrajcastError, ValueError):
    """Array shapes do not line up."""


class DataError(TrajcastError, ValueError):
    """Input files or records failed to parse or validate."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class NumericError(TrajcastError, ArithmeticError):
    """NaN/Inf encountered where finite values are required."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
