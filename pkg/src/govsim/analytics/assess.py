"""Compliance assessments (explicit / range / baseline) and alert correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Sequence

from ..errors import InsufficientBaseline

EXPLICIT = "explicit"
RANGE = "range"
BASELINE = "baseline"
KINDS = (EXPLICIT, RANGE, BASELINE)


@dataclass(frozen=True)
class AssessmentRule:
    """One compliance check over a stream of observations.

    explicit: alert whenever the observed value differs from ``expected``.
    range:    alert outside ``[lo, hi]`` (either bound may be open).
    baseline: learn mean/std over the first ``window`` observations, then
              alert when ``|x - mean| > k * std``.
    """

    kind: str
    target: str
    expected: object = None
    lo: float | None = None
    hi: float | None = None
    window: int | None = None
    k: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == EXPLICIT:
            if self.expected is None or any(
                v is not None for v in (self.lo, self.hi, self.window, self.k)
            ):
                raise ValueError("explicit rules set exactly 'expected'")
        elif self.kind == RANGE:
            if self.lo is None and self.hi is None:
                raise ValueError("range rules need at least one bound")
            if self.expected is not None or self.window is not None or self.k is not None:
                raise ValueError("range rules set only lo/hi")
            if self.lo is not None and self.hi is not None and self.lo > self.hi:
                raise ValueError("range lower bound exceeds upper bound")
        else:
            if self.window is None or self.k is None:
                raise ValueError("baseline rules need window and k")
            if self.expected is not None or self.lo is not None or self.hi is not None:
                raise ValueError("baseline rules set only window/k")
            if self.window < 2:
                raise ValueError("baseline window must be >= 2")
            if self.k <= 0:
                raise ValueError("sigma multiplier k must be positive")

    @property
    def rule_id(self) -> str:
        return f"{self.kind}:{self.target}"

    def expectation(self) -> str:
        if self.kind == EXPLICIT:
            return f"expected {self.expected!r}"
        if self.kind == RANGE:
            return f"expected within [{self.lo}, {self.hi}]"
        return f"expected within {self.k} sigma of a {self.window}-observation baseline"


@dataclass(frozen=True)
class Observation:
    at: datetime
    source: str
    value: object


@dataclass(frozen=True)
class Alert:
    rule_id: str
    source: str
    observed: object
    expected: str
    at: datetime


@dataclass(frozen=True)
class Incident:
    """A burst of same-source alerts collapsed into one record."""

    count: int
    sources: frozenset[str]
    window_start: datetime
    window_end: datetime
    representative: Alert

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("incident count must be >= 1")


def _alert(rule: AssessmentRule, obs: Observation) -> Alert:
    return Alert(
        rule_id=rule.rule_id,
        source=obs.source,
        observed=obs.value,
        expected=rule.expectation(),
        at=obs.at,
    )


def assess(rule: AssessmentRule, observations: Iterable[Observation]) -> list[Alert]:
    """Run one rule over an observation stream, returning the alerts raised.

    Baseline rules consume the first ``window`` observations as training data
    (never judged) and raise InsufficientBaseline when the stream is shorter.
    """
    obs = list(observations)
    alerts: list[Alert] = []
    if rule.kind == EXPLICIT:
        for o in obs:
            if o.value != rule.expected:
                alerts.append(_alert(rule, o))
        return alerts
    if rule.kind == RANGE:
        for o in obs:
            if (rule.lo is not None and o.value < rule.lo) or (
                rule.hi is not None and o.value > rule.hi
            ):
                alerts.append(_alert(rule, o))
        return alerts
    if len(obs) < rule.window:
        raise InsufficientBaseline(
            f"baseline needs {rule.window} observations, got {len(obs)}"
        )
    training = [float(o.value) for o in obs[: rule.window]]
    mean = math.fsum(training) / len(training)
    var = math.fsum((x - mean) ** 2 for x in training) / (len(training) - 1)
    std = math.sqrt(var)
    for o in obs[rule.window :]:
        if abs(float(o.value) - mean) > rule.k * std:
            alerts.append(_alert(rule, o))
    return alerts


def correlate_alerts(alerts: Sequence[Alert], window: timedelta) -> list[Incident]:
    """Collapse same-source alerts within a rolling window into incidents.

    Consecutive alerts from one source belong to the same incident while the
    gap stays within ``window``. Incident counts always sum to the number of
    input alerts.
    """
    if any(b.at < a.at for a, b in zip(alerts, alerts[1:])):
        raise ValueError("alerts must be time-ordered")
    open_groups: dict[str, list[Alert]] = {}
    incidents: list[Incident] = []

    def close(group: list[Alert]) -> None:
        incidents.append(
            Incident(
                count=len(group),
                sources=frozenset(a.source for a in group),
                window_start=group[0].at,
                window_end=group[-1].at,
                representative=group[0],
            )
        )

    for alert in alerts:
        group = open_groups.get(alert.source)
        if group is not None and alert.at - group[-1].at <= window:
            group.append(alert)
        else:
            if group is not None:
                close(group)
            open_groups[alert.source] = [alert]
    for source in sorted(open_groups):
        close(open_groups[source])
    incidents.sort(key=lambda i: (i.window_start, sorted(i.sources)))
    return incidents
