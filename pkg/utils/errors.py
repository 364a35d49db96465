"""
Error types for the screening pipeline and their CLI exit codes
"""

from typing import Optional


class MobsError(Exception):
    """Base class for all screening errors"""


class InvalidArgumentError(MobsError, ValueError):
    """Argument violates a documented precondition"""


class InvalidInputError(InvalidArgumentError):
    """Input data or file content is unusable"""


class UnsupportedCardinalityError(InvalidInputError):
    """Predictor has more levels than the packed format can hold"""


class FormatError(InvalidInputError):
    """Malformed persisted file"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(MobsError, ArithmeticError):
    """Non-finite value where a finite one is required"""


class ChainFailureError(NumericError):
    """Gibbs chain reached a non-finite state"""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


class MobsIOError(MobsError, OSError):
    """Reading or writing a file failed"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class InternalError(MobsError):
    """State that valid inputs can never produce"""


EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_NUMERIC_FAILURE = 3
EXIT_IO_FAILURE = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code"""
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC_FAILURE
    if isinstance(exc, (MobsIOError, OSError)):
        return EXIT_IO_FAILURE
    if isinstance(exc, ValueError):
        return EXIT_INVALID_INPUT
    return 1
