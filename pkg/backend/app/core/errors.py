"""
Exception hierarchy shared by the solver services, readers and outer surfaces.
"""
from typing import Any, Dict, Optional


class HealFracError(Exception):
    """Base class for every error raised by HealFrac."""


class MaterialDomainError(HealFracError, ValueError):
    """A material-law function was evaluated outside its domain (negative opening or rest time)."""


class GeometryError(HealFracError):
    """Degenerate element or a crack chord that does not cut the element."""


class LocalSolveError(HealFracError):
    """The cohesive balance of one element did not converge."""

    def __init__(self, message: str, element_id: Optional[int] = None, report: Any = None):
        super().__init__(message)
        self.element_id = element_id
        self.report = report


class StepCutRequest(HealFracError):
    """Raised inside a global iteration when the current increment has to be cut."""


class SolverFailure(HealFracError):
    """Step cuts are exhausted; the run stops with a partial history."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MeshFormatError(HealFracError):
    """Malformed or invalid mesh file."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ScenarioError(HealFracError):
    """Malformed scenario file, unknown key in strict mode or inconsistent blocks."""


class ConfigurationError(HealFracError):
    """Inconsistent request, e.g. a calibration whose curves share no CMOD range."""
