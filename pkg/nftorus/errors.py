"""Typed exceptions for nftorus computations."""

from __future__ import annotations

from typing import Any


class NFTorusError(Exception):
    """Base class for nftorus exceptions."""


class NFTorusConfigError(NFTorusError):
    """Raised when an experiment configuration cannot be read or parsed."""


class NFTorusValidationError(NFTorusError):
    """Raised when input arguments are outside supported ranges."""

    def __init__(self, message: str, violations: list[str] | None = None) -> None:
        super().__init__(message)
        self.violations = list(violations) if violations else [message]


class NFTorusNumericalError(NFTorusError):
    """Raised when a computation aborts on a violated numerical invariant."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
