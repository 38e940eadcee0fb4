"""Exception hierarchy.

Every exception carries an ``exit_code`` so the command line driver can map
failures onto its stable exit-code contract (2 input/schema, 3 degenerate
data, 4 numerical failure).
"""

from __future__ import annotations


class PseudoFlowError(Exception):
    exit_code = 1


class MalformedInputError(PseudoFlowError, ValueError):
    exit_code = 2


class ConfigError(PseudoFlowError, ValueError):
    exit_code = 2


class SchemaError(ConfigError):
    """Invalid JSON/PLY schema. ``path`` is a JSON path such as ``$.weights.lambda_smooth``."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParseError(MalformedInputError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})" if offset is not None else message)


class ShapeError(MalformedInputError):
    pass


class EmptyInputError(PseudoFlowError, ValueError):
    exit_code = 3


class InsufficientPointsError(PseudoFlowError, ValueError):
    exit_code = 3


class BehindCameraError(MalformedInputError):
    def __init__(self, index: int, z: float):
        self.index = index
        super().__init__(f"point {index} has z={z!r} <= 0 (behind the camera)")


class NumericalFailure(PseudoFlowError, ArithmeticError):
    """Raised when the solver produces a non-finite loss; ``trace`` holds progress so far."""

    exit_code = 4

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
