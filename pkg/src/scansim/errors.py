"""Exception hierarchy for the scansim package."""


class ScanError(Exception):
    """Base class for all scansim errors."""


class ScenarioError(ScanError):
    """Invalid scenario configuration or scenario file."""


class GeometryError(ScanError):
    """Degenerate measurement geometry (singular normal equations, etc.)."""


class FilterError(ScanError):
    """Numerical failure inside a filter step."""


class CalibrationError(ScanError):
    """Transform-vector estimation could not be completed."""
