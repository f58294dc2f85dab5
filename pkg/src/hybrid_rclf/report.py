"""Verification reports shared by the model checks, the RCLF certifier and
the barrier-safety tools."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


def _json_float(v: Optional[float]):
    # strict JSON has no infinities; keep them readable as strings
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and non-finite floats into
    plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation)."""
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass(frozen=True)
class Violation:
    x: tuple
    phase: str
    margin: Optional[float]

    def to_dict(self) -> dict:
        return {"x": [float(v) for v in self.x], "phase": self.phase,
                "margin": _json_float(self.margin)}


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of a sampled check.

    ``worst_margin`` is the smallest margin seen (negative means violated);
    ``details`` carries per-phase summaries or check-specific numbers.
    """

    condition: str
    points_checked: int
    violations: tuple = ()
    worst_margin: Optional[float] = None
    flags: tuple = ()
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "points_checked": int(self.points_checked),
            "violations": [v.to_dict() for v in self.violations],
            "worst_margin": _json_float(self.worst_margin),
            "flags": list(self.flags),
            "details": jsonable(self.details),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())
