"""Threshold gate: decide whether a criticality report is acceptable.

Upper bounds (R_max, H_max, p_max, BTN_max, CP_max) and lower bounds
(DCE_min, TTC_min) are all strict: a value exactly on the bound counts as a
violation. Unset bounds are skipped. Metrics absent from a report (no agent
ever gets close, so no TTC exists) satisfy their lower bounds vacuously.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .errors import MetricError

# (config field, report attribute, kind)
_BOUNDS = (
    ("R_max", "risk", "upper"),
    ("H_max", "harm", "upper"),
    ("p_max", "cp", "upper"),
    ("BTN_max", "btn", "upper"),
    ("CP_max", "cp", "upper"),
    ("DCE_min", "dce", "lower"),
    ("TTC_min", "ttc", "lower"),
)


@dataclass(frozen=True)
class ThresholdConfig:
    R_max: Optional[float] = None
    H_max: Optional[float] = None
    p_max: Optional[float] = None
    BTN_max: Optional[float] = None
    CP_max: Optional[float] = None
    DCE_min: Optional[float] = None
    TTC_min: Optional[float] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise MetricError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**{k: (None if v is None else float(v)) for k, v in data.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **kwargs) -> "ThresholdConfig":
        merged = self.to_dict()
        merged.update(kwargs)
        return ThresholdConfig.from_dict(merged)


@dataclass(frozen=True)
class Violation:
    metric: str
    value: float
    bound: float


@dataclass(frozen=True)
class AssessmentResult:
    valid: bool
    violations: tuple


def assess(report, cfg: ThresholdConfig) -> AssessmentResult:
    violations = []
    for field_name, attr, kind in _BOUNDS:
        bound = getattr(cfg, field_name)
        if bound is None:
            continue
        if not hasattr(report, attr):
            raise MetricError(f"report lacks metric {attr!r} required by {field_name}")
        value = getattr(report, attr)
        if kind == "upper":
            if value is not None and value >= bound:
                violations.append(Violation(field_name, float(value), float(bound)))
        else:
            # absent distance/time metrics mean nothing ever got close
            if value is not None and value <= bound:
                violations.append(Violation(field_name, float(value), float(bound)))
    return AssessmentResult(valid=not violations, violations=tuple(violations))
