"""Exception hierarchy shared by all bernflow modules."""

from __future__ import annotations


class BernflowError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BernflowError, ValueError):
    """Invalid grid, solver or run parameters."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class ContainmentError(BernflowError, ValueError):
    """A set leaves the grid domain, its margin, or fails to contain the source."""


class DegenerateSetError(BernflowError, ValueError):
    """Empty or full masks where a proper subset is required."""


class DomainError(BernflowError, ValueError):
    """Radial formula called outside its parameter domain."""


class ContractError(BernflowError, ValueError):
    """Inputs are individually valid but mutually inconsistent."""


class SolverError(BernflowError, RuntimeError):
    """Linear or free-boundary solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics or {}
