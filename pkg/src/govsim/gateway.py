"""Ingestion: push gateways, pull collectors, and the queue forwarder.

A gateway validates each pushed document, applies its stage stamp, and
publishes onto its bus topic. Rejected documents are counted and
dead-lettered, never published; bus refusals come back as retryable
negative acknowledgments.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import TYPE_CHECKING, Callable

from .envelope import parse_and_validate, serialize, stamp_stage
from .errors import (
    AllChannelsDown,
    DuplicateStage,
    GovSimError,
    InvalidDataType,
    InvalidTimestamp,
    MalformedDocument,
    NonMonotonicStamp,
    SchemaViolation,
    SourceUnavailable,
)

if TYPE_CHECKING:  # pragma: no cover
    from .bus import BusMessage, FaultTolerantBus
    from .pipeline import DeadLetterSink

#: Negative-ack reasons the caller should retry; everything else is final.
RETRYABLE_REASONS = frozenset({"bus-unavailable", "gateway-down", "remote-down"})

_REJECT_REASONS = {
    MalformedDocument: "malformed-document",
    SchemaViolation: "schema-violation",
    InvalidDataType: "invalid-data-type",
    InvalidTimestamp: "invalid-timestamp",
    DuplicateStage: "duplicate-stage",
    NonMonotonicStamp: "non-monotonic-stamp",
}


@dataclass(frozen=True)
class Ack:
    """Ingestion endpoint acknowledgment."""

    log_id: str | None
    accepted: bool
    reason: str | None = None


@dataclass(frozen=True)
class RetryPolicy:
    """Default retry discipline: 3 attempts, exponential backoff from 100 ms."""

    attempts: int = 3
    initial_backoff: timedelta = timedelta(milliseconds=100)
    multiplier: float = 2.0

    def backoffs(self) -> list[timedelta]:
        """Pauses between attempts (attempts - 1 entries)."""
        out = []
        pause = self.initial_backoff
        for _ in range(self.attempts - 1):
            out.append(pause)
            pause = pause * self.multiplier
        return out


@dataclass
class GatewayConfig:
    stage_name: str
    bus: "FaultTolerantBus"
    rg_id: str
    topic: str = "ingress"


class Gateway:
    """Push-style API gateway: parse, stamp, publish; atomic per message."""

    def __init__(self, config: GatewayConfig, dead_letters: "DeadLetterSink | None" = None):
        self.config = config
        self.dead_letters = dead_letters
        self.available = True
        self.received = 0
        self.published = 0
        self.rejected = 0
        self.bus_failures = 0

    @property
    def publisher_id(self) -> str:
        return f"{self.config.rg_id}:{self.config.stage_name}"

    def ingest_push(self, raw: bytes | str, now: datetime) -> Ack:
        """Contract: received == published + rejected + bus_failures."""
        if not self.available:
            return Ack(log_id=None, accepted=False, reason="gateway-down")
        self.received += 1
        try:
            env = parse_and_validate(raw)
            stamped = stamp_stage(env, self.config.stage_name, now)
        except tuple(_REJECT_REASONS) as exc:
            self.rejected += 1
            if self.dead_letters is not None:
                self.dead_letters.add(_REJECT_REASONS[type(exc)], now, raw)
            return Ack(log_id=None, accepted=False, reason=_REJECT_REASONS[type(exc)])
        try:
            self.config.bus.publish(self.publisher_id, self.config.topic, stamped)
        except AllChannelsDown:
            self.bus_failures += 1
            return Ack(log_id=stamped.log_id, accepted=False, reason="bus-unavailable")
        self.published += 1
        return Ack(log_id=stamped.log_id, accepted=True)


def collect_pull(source, limit: int, *, retry: RetryPolicy | None = None, sleep=None) -> list:
    """Drain up to ``limit`` pending envelopes from a pollable source, FIFO.

    ``source.poll()`` returns the next envelope or None when drained. Errors
    are retried per the policy, then surface as SourceUnavailable.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    retry = retry or RetryPolicy()
    out = []
    while len(out) < limit:
        backoffs = iter(retry.backoffs())
        while True:
            try:
                item = source.poll()
                break
            except GovSimError as exc:
                pause = next(backoffs, None)
                if pause is None:
                    raise SourceUnavailable(
                        f"source still failing after {retry.attempts} attempts: {exc}"
                    ) from exc
                if sleep is not None:
                    sleep(pause.total_seconds())
        if item is None:
            break
        out.append(item)
    return out


def forward_queue(
    fwd_stage: str,
    msg: "BusMessage",
    remote: Callable[[bytes, datetime], Ack],
    now: datetime,
    *,
    resolve=None,
    dead_letters: "DeadLetterSink | None" = None,
) -> Ack:
    """Stamp the forwarder stage and hand the envelope to the remote endpoint.

    Delivery is at-least-once: a retryable refusal from the remote leaves the
    message on its queue (the caller redelivers); an envelope that already
    carries the forwarder stamp is diverted to the dead-letter sink.
    """
    env = resolve(msg) if resolve is not None else msg.body
    try:
        stamped = stamp_stage(env, fwd_stage, now)
    except (DuplicateStage, NonMonotonicStamp) as exc:
        reason = _REJECT_REASONS[type(exc)]
        if dead_letters is not None:
            dead_letters.add(reason, now, serialize(env))
        return Ack(log_id=env.log_id, accepted=False, reason=reason)
    return remote(serialize(stamped), now)


class EnvelopeSpool:
    """Simple pollable FIFO source for pull-style collection."""

    def __init__(self, items=()):
        self._items = list(items)

    def push(self, env) -> None:
        self._items.append(env)

    def poll(self):
        if not self._items:
            return None
        return self._items.pop(0)

    def __len__(self) -> int:
        return len(self._items)
