"""
Exception types shared by every FlowLens package, so that the CLI
can map failures onto exit codes
"""

from typing import Optional


class FlowLensError(Exception):
    """
    Base class of every error raised on purpose by FlowLens
    """


class ParameterError(FlowLensError, ValueError):
    """
    Invalid argument or configuration value
    """


class ShapeError(ParameterError):
    """
    Grids or vectors whose geometry does not match
    """


class FormatError(FlowLensError, ValueError):
    """
    Malformed file contents. The offending field is kept in 
    `field` so that callers can report it
    """

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        super().__init__(message if field is None else f"{message} (field: {field})")
        self.field = field
        self.detail = message


class AnnotationParseError(FormatError):
    """
    Malformed row in an annotation CSV file
    """

    def __init__(self, message: str, line: int, field: Optional[str] = None) -> None:
        super().__init__(f"line {line}: {message}", field=field)
        self.line = line


class GenerationError(FlowLensError, RuntimeError):
    """
    A synthetic generator could not satisfy its constraints
    """


class NumericError(FlowLensError, ArithmeticError):
    """
    Non-finite or diverging values during training or integration
    """

    def __init__(self, message: str,
                 epoch: Optional[int] = None,
                 step: Optional[int] = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class StageError(FlowLensError, RuntimeError):
    """
    Failure of one stage of the experiment driver. The original 
    exception is available through `__cause__`
    """

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"Stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
