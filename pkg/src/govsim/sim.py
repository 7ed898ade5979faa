"""Deterministic discrete-event loop driving simulated or wall-clock runs.

Events execute in ``(time, component_id, sequence)`` order, so two runs that
schedule the same work produce identical interleavings. Background events
(heartbeats, monitors) keep running while foreground work is pending but do
not prevent quiescence: the loop stops once no foreground event remains.
"""

from __future__ import annotations

import heapq
import time as _time
from datetime import datetime, timedelta
from typing import Callable

from .clock import DEFAULT_START, ensure_utc
from .errors import QuiescenceTimeout


class EventLoop:
    def __init__(self, start: datetime = DEFAULT_START, wall: bool = False):
        self._now = ensure_utc(start)
        self._start = self._now
        self._heap: list[tuple[datetime, str, int, bool, Callable[[], None]]] = []
        self._seq = 0
        self._foreground = 0
        self._wall = wall

    def now(self) -> datetime:
        return self._now

    def schedule(
        self,
        at: datetime | timedelta,
        component: str,
        fn: Callable[[], None],
        background: bool = False,
    ) -> None:
        when = self._now + at if isinstance(at, timedelta) else ensure_utc(at)
        if when < self._now:
            raise ValueError(f"cannot schedule in the past: {when} < {self._now}")
        self._seq += 1
        heapq.heappush(self._heap, (when, component, self._seq, background, fn))
        if not background:
            self._foreground += 1

    def run(self, budget: timedelta | None = None) -> datetime:
        """Process events until no foreground work remains.

        Raises QuiescenceTimeout if foreground work is still pending past
        ``start + budget`` in simulated time (a wiring bug or a permanently
        dead component).
        """
        deadline = self._start + budget if budget is not None else None
        wall_anchor = _time.monotonic()
        sim_anchor = self._now
        while self._foreground > 0:
            if not self._heap:
                raise RuntimeError("foreground events pending but queue empty")
            when, component, _seq, background, fn = heapq.heappop(self._heap)
            if deadline is not None and when > deadline:
                raise QuiescenceTimeout(
                    f"no quiescence by {deadline.isoformat()}; next event "
                    f"{component!r} at {when.isoformat()}"
                )
            if self._wall:
                lag = (when - sim_anchor).total_seconds() - (_time.monotonic() - wall_anchor)
                if lag > 0:
                    _time.sleep(lag)
            self._now = when
            if not background:
                self._foreground -= 1
            fn()
        return self._now
