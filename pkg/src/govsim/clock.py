"""Clock sources: a manually advanced simulated clock and a wall clock.

Every timestamp in the system is a timezone-aware UTC ``datetime`` with
microsecond precision. Clocks are non-decreasing by construction, which the
storage retention checks and stage stamping rely on.
"""

from __future__ import annotations

import time
from datetime import datetime, timedelta, timezone

DEFAULT_START = datetime(2024, 1, 1, 0, 0, 0, tzinfo=timezone.utc)


def ensure_utc(dt: datetime) -> datetime:
    if dt.tzinfo is None or dt.utcoffset() != timedelta(0):
        raise ValueError(f"expected a UTC-aware datetime, got {dt!r}")
    return dt


class SimClock:
    """Simulated clock: time moves only when the owner advances it."""

    def __init__(self, start: datetime = DEFAULT_START):
        self._now = ensure_utc(start)

    def now(self) -> datetime:
        return self._now

    def wait_until(self, dt: datetime) -> None:
        dt = ensure_utc(dt)
        if dt < self._now:
            raise ValueError(f"clock cannot move backwards: {dt} < {self._now}")
        self._now = dt


class WallClock:
    """Real-time clock; ``wait_until`` sleeps until the target instant."""

    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def wait_until(self, dt: datetime) -> None:
        remaining = (ensure_utc(dt) - self.now()).total_seconds()
        if remaining > 0:
            time.sleep(remaining)
