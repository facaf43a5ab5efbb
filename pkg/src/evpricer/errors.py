"""Shared exception types. Input problems exit the CLI with code 2, numerical
failures with code 3."""
from __future__ import annotations

from pathlib import Path


class InputError(ValueError):
    """Invalid input data or configuration."""


class ParseError(InputError):
    """Malformed record in an input file; carries the file and line number."""

    def __init__(self, path: str | Path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class NumericalError(RuntimeError):
    """A solver failed to reach its target accuracy."""


class UEConvergenceError(NumericalError):
    """Equilibrium solve hit the iteration cap; carries the best iterate."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class SingularJacobianError(NumericalError):
    """KKT Jacobian of the sensitivity system is numerically singular."""

    def __init__(self, message: str, rcond: float = float("nan")):
        super().__init__(message)
        self.rcond = rcond
