"""
Exception hierarchy. Each error carries the exit code the CLI reports.
"""


class BCGNError(Exception):
    """Base class for all engine errors"""

    exit_code = 1


class ConfigValidationError(BCGNError, ValueError):
    """Invalid configuration or arguments"""

    exit_code = 1


class ShapeError(BCGNError, ValueError):
    """Operands with incompatible shapes"""

    exit_code = 1


class NumericalError(BCGNError, ArithmeticError):
    """A computation produced non-finite values"""

    exit_code = 2


class CheckFailure(NumericalError):
    """A gradient or theory check exceeded its tolerance"""

    exit_code = 2


class ContainerError(BCGNError, OSError):
    """Malformed or truncated tensor container"""

    exit_code = 3


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to a process exit code."""
    if isinstance(exc, BCGNError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 3
    if isinstance(exc, ArithmeticError):
        return 2
    return 1
