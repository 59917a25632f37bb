"""Exception hierarchy. Each class carries the exit code the CLI reports."""

from typing import Any


class NonlocalRamseyError(Exception):
    """Base class for every error raised by the package."""

    exit_code: int = 1


class ConfigError(NonlocalRamseyError, ValueError):
    """Invalid configuration value, unknown key or violated parameter constraint."""

    exit_code = 1


class GridBudgetError(ConfigError):
    """The requested grid exceeds the configured point budget."""


class StructuralError(ConfigError):
    """Fields, pair sets or grids that do not belong together."""


class ConvergenceError(NonlocalRamseyError, RuntimeError):
    """An iterative method ran out of budget.

    Args:
        message: Human readable description.
        residual: Last measured residual or distance, when one exists.
        report: Diagnostics collected up to the failure (PicardReport, trace...).
    """

    exit_code = 2

    def __init__(self, message: str, *, residual: float | None = None, report: Any = None):
        super().__init__(message)
        self.residual = residual
        self.report = report


class LineSearchError(ConvergenceError):
    """Armijo backtracking exhausted its halvings."""


class CheckFailure(NonlocalRamseyError):
    """A numerical property check did not hold."""

    exit_code = 3


class KernelPropertyError(CheckFailure):
    """A kernel property witness breached its theoretical bound."""

    def __init__(self, property_id: int, name: str, witnessed: float, bound: float):
        super().__init__(
            f"kernel property ({property_id}) {name} violated: witnessed {witnessed!r}, bound {bound!r}"
        )
        self.property_id = property_id
        self.witnessed = witnessed
        self.bound = bound


class DataIOError(NonlocalRamseyError):
    """Unreadable or inconsistent input data file."""

    exit_code = 4
