"""
Exception hierarchy shared by the core modules, the agents and the CLI.

Every error carries the process exit code the CLI should use:
  2 - usage / input errors (bad files, bad arguments, violated preconditions)
  1 - internal / numerical failures
"""
from __future__ import annotations

from typing import Optional


class SemFMError(Exception):
    exit_code: int = 1


class InputError(SemFMError, ValueError):
    """A precondition on the inputs was violated."""
    exit_code = 2


class MeshParseError(InputError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.raw_message = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def __reduce__(self):
        return type(self), (self.raw_message, self.line)


class UnsupportedSizeError(InputError):
    pass


class NumericalError(SemFMError, RuntimeError):
    exit_code = 1


class EigenSolverError(NumericalError):
    def __init__(self, message: str, achieved: int = 0):
        self.achieved = achieved
        self.raw_message = message
        super().__init__(f"{message} (converged eigenpairs: {achieved})")

    def __reduce__(self):
        return type(self), (self.raw_message, self.achieved)


class StageError(SemFMError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {cause}")

    def __reduce__(self):
        return type(self), (self.stage, self.cause)
