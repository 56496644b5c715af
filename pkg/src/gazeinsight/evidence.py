"""Evidence records shared by insights and adaptation signals.

An evidence item carries the value, the comparison and the threshold that
produced a decision, so the decision can be re-checked from the record alone.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field

COMPARATORS = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
}


def compare(value, comparator, threshold) -> bool:
    if value is None:
        return False
    try:
        op = COMPARATORS[comparator]
    except KeyError:
        raise ValueError(f"unknown comparator {comparator!r}") from None
    return bool(op(value, threshold))


@dataclass(frozen=True)
class Evidence:
    metric_name: str
    value: float
    comparator: str
    threshold: float
    sample_range: tuple | None = None  # (start_ms, end_ms)
    event_refs: tuple = field(default_factory=tuple)

    def holds(self) -> bool:
        return compare(self.value, self.comparator, self.threshold)

    def to_dict(self) -> dict:
        out = {"metric_name": self.metric_name, "value": self.value,
               "comparator": self.comparator, "threshold": self.threshold}
        if self.sample_range is not None:
            out["sample_range"] = list(self.sample_range)
        if self.event_refs:
            out["event_refs"] = list(self.event_refs)
        return out

    @classmethod
    def from_dict(cls, d) -> "Evidence":
        rng = d.get("sample_range")
        return cls(d["metric_name"], d["value"], d["comparator"], d["threshold"],
                   tuple(rng) if rng is not None else None, tuple(d.get("event_refs", ())))


def reevaluate(evidence) -> bool:
    """True when every evidence item, taken on its own, still satisfies its comparison."""
    items = [e if isinstance(e, Evidence) else Evidence.from_dict(e) for e in evidence]
    return bool(items) and all(e.holds() for e in items)
