"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI reports for it.
"""


class BorError(Exception):
    exit_code = 1

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ConfigError(BorError, ValueError):
    exit_code = 2


class DataError(BorError, ValueError):
    exit_code = 3


class NumericError(BorError, ArithmeticError):
    exit_code = 4
