"""Exception taxonomy shared across the package.

Every public operation raises one of these (or a subclass) so that callers,
including the command-line front end, can map failures onto a small set of
outcomes: bad arguments, unusable data, or numerical breakdown.
"""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition (shape, range, enum)."""


class DegenerateSignalError(ValueError):
    """A computation is undefined for this input (zero variance, zero energy)."""


class ParseError(ValueError):
    """A file could not be parsed.  ``line`` is 1-based when applicable."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericFailureError(ArithmeticError):
    """A numerical routine produced non-finite values.  ``stage`` names where."""

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        if stage is not None:
            message = f"{stage}: {message}"
        super().__init__(message)


class TrainingDivergedError(NumericFailureError):
    """Training loss exceeded its abort bound; carries the history so far."""

    def __init__(self, message: str, history=None):
        super().__init__(message, stage="train")
        self.history = history
