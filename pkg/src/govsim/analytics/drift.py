"""Post-deployment drift detection against a declarative desired state."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

PRESENT = "present"
MISSING = "missing"


@dataclass(frozen=True)
class DesiredState:
    """Declared expectations for a running topology.

    The scenario document's ``desired_state`` block and the runner's observed
    snapshot both normalize to this shape, making drift a field-by-field diff.
    """

    components: frozenset[str]
    retention_days: float
    topics: tuple[str, ...]
    filter_rules: tuple[tuple[str, str, object], ...]
    leg_slos: Mapping[str, tuple[float, float]]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DesiredState":
        rules = []
        for rule in doc.get("filter_rules", ()):
            value = rule["value"]
            if isinstance(value, list):
                value = tuple(sorted(map(str, value)))
            rules.append((rule["field"], rule["predicate"], value))
        return cls(
            components=frozenset(doc.get("components", ())),
            retention_days=float(doc.get("retention_days", 0)),
            topics=tuple(doc.get("topics", ())),
            filter_rules=tuple(rules),
            leg_slos={
                str(name): (float(lo), float(hi))
                for name, (lo, hi) in dict(doc.get("leg_slos", {})).items()
            },
        )

    def to_dict(self) -> dict:
        return {
            "components": sorted(self.components),
            "retention_days": self.retention_days,
            "topics": list(self.topics),
            "filter_rules": [
                {"field": f, "predicate": p, "value": list(v) if isinstance(v, tuple) else v}
                for f, p, v in self.filter_rules
            ],
            "leg_slos": {name: list(bounds) for name, bounds in sorted(self.leg_slos.items())},
        }


@dataclass(frozen=True)
class DriftItem:
    field: str
    desired: object
    observed: object


@dataclass(frozen=True)
class DriftReport:
    items: tuple[DriftItem, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.items

    def to_dict(self) -> dict:
        return {
            "drift_detected": not self.empty,
            "items": [
                {"field": i.field, "desired": i.desired, "observed": i.observed}
                for i in self.items
            ],
        }


def _flatten(state: DesiredState) -> dict[str, object]:
    flat: dict[str, object] = {"retention_days": state.retention_days}
    for name in state.components:
        flat[f"components/{name}"] = PRESENT
    for name in state.topics:
        flat[f"topics/{name}"] = PRESENT
    flat["filter_rules"] = repr(tuple(sorted(state.filter_rules, key=repr)))
    for name, bounds in state.leg_slos.items():
        flat[f"leg_slos/{name}"] = bounds
    return flat


def detect_drift(desired: DesiredState, observed: DesiredState | Mapping) -> DriftReport:
    """Every declared field whose observed value differs, exactly once.

    Set-valued fields (components, topics) report per element as
    present/missing, mirroring how operators reason about missing pieces.
    """
    if not isinstance(observed, DesiredState):
        observed = DesiredState.from_dict(observed)
    want = _flatten(desired)
    have = _flatten(observed)
    items = []
    for path in sorted(set(want) | set(have)):
        d = want.get(path, MISSING)
        o = have.get(path, MISSING)
        if d != o:
            items.append(DriftItem(field=path, desired=d, observed=o))
    return DriftReport(items=tuple(items))
