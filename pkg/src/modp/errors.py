"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 1,
``DataValidationError`` (and subclasses) -> 2, ``NumericalError`` -> 3.
"""


class ModpError(Exception):
    pass


class ConfigError(ModpError):
    """Bad usage or configuration."""


class DataValidationError(ModpError, ValueError):
    """Input data or an artifact does not satisfy its contract."""


class SchemaError(DataValidationError):
    pass


class OneHotError(DataValidationError):
    def __init__(self, message, row=None, block=None):
        super().__init__(message)
        self.row = row
        self.block = block


class FormatError(DataValidationError):
    """Artifact has the wrong magic number or an incompatible version."""


class NumericalError(ModpError, ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
