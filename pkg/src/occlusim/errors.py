"""Exception types shared across the package."""


class OcclusimError(Exception):
    """Base class for all package errors."""


class GeometryError(OcclusimError):
    """Degenerate or out-of-domain geometric input."""


class ScenarioError(OcclusimError):
    """Malformed scenario data (missing fields, dangling references, bad shapes)."""


class MetricError(OcclusimError):
    """Inconsistent metric inputs (horizon mismatch, negative speeds, ...)."""


class PlanExhaustionError(OcclusimError):
    """Every sampled candidate was rejected; the caller must fall back to braking."""
