"""Fault-tolerant data bus: FIFO topics, heartbeat failover, pointer bodies.

Two durable in-process channels (primary + auxiliary) carry topic-addressed
messages. Delivery is at-least-once with per-(publisher, topic) FIFO order on
each channel; consumers acknowledge each message and deduplicate by
``message_id``. A heartbeat monitor drives the health state machine
PRIMARY -> FAILED_OVER -> RECOVERING -> PRIMARY; while failed over, publishes
are routed to the auxiliary channel. Envelopes larger than the payload
threshold travel as pointers into a payload store instead of inline.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable

from .envelope import TelemetryEnvelope, parse_and_validate, serialize
from .errors import AllChannelsDown
from .sim import EventLoop
from .storage import MUTABLE, ObjectStore

PRIMARY = "PRIMARY"
FAILED_OVER = "FAILED_OVER"
RECOVERING = "RECOVERING"

#: Topics used by the standard two-cloud topology.
STANDARD_TOPICS = ("ingress", "converter", "archiver", "alerts", "incidents")

#: Handler return value meaning "acknowledgment will arrive later via done()".
DEFER = "defer"

DEFAULT_PAYLOAD_THRESHOLD = 256 * 1024
DEFAULT_BEAT_INTERVAL = timedelta(milliseconds=500)
DEFAULT_MISS_THRESHOLD = 3
DEFAULT_REDELIVERY_DELAY = timedelta(milliseconds=200)


@dataclass(frozen=True)
class PayloadRef:
    """Pointer to an oversized payload parked in a store."""

    store_kind: str
    key: str
    size: int


@dataclass(frozen=True)
class BusMessage:
    """Topic-addressed wrapper; the body is an inline envelope, a pointer to
    an oversized payload, or a small JSON-able event (alerts, incidents)."""

    message_id: str
    topic: str
    publisher: str
    sequence: int
    body: TelemetryEnvelope | PayloadRef | dict
    published_at: datetime

    @property
    def is_ref(self) -> bool:
        return isinstance(self.body, PayloadRef)


@dataclass(frozen=True)
class BusHealth:
    state: str
    missed_beats: int
    last_beat: datetime
    recovering_since: datetime | None = None


def record_beat(health: BusHealth, now: datetime) -> BusHealth:
    """A heartbeat arrived: reset the miss counter, begin recovery if failed."""
    if health.state == FAILED_OVER:
        return BusHealth(state=RECOVERING, missed_beats=0, last_beat=now, recovering_since=now)
    return BusHealth(
        state=health.state, missed_beats=0, last_beat=now,
        recovering_since=health.recovering_since,
    )


def monitor_heartbeat(
    health: BusHealth,
    beat_interval: timedelta,
    miss_threshold: int,
    now: datetime,
) -> BusHealth:
    """Evaluate one monitoring tick; call once per ``beat_interval``.

    A tick without a beat in the last interval counts as a miss; reaching
    ``miss_threshold`` misses fails over. Recovery enters RECOVERING when a
    beat arrives while failed over and is promoted to PRIMARY only after one
    full healthy interval, so the way back never skips RECOVERING.
    """
    if beat_interval <= timedelta(0):
        raise ValueError("beat_interval must be positive")
    if miss_threshold < 1:
        raise ValueError("miss_threshold must be >= 1")
    if now - health.last_beat >= beat_interval:
        missed = health.missed_beats + 1
        state = health.state
        recovering_since = health.recovering_since
        if missed >= miss_threshold and state in (PRIMARY, RECOVERING):
            state = FAILED_OVER
            recovering_since = None
        return BusHealth(
            state=state, missed_beats=missed, last_beat=health.last_beat,
            recovering_since=recovering_since,
        )
    if (
        health.state == RECOVERING
        and health.recovering_since is not None
        and now - health.recovering_since >= beat_interval
    ):
        return BusHealth(
            state=PRIMARY, missed_beats=health.missed_beats,
            last_beat=health.last_beat, recovering_since=None,
        )
    return health


class _Subscription:
    """Per-channel consumer state: a cursor plus one in-flight message."""

    def __init__(self, channel: "Channel", subscriber_id: str, topic: str,
                 handler, transit_fn, cursor: int):
        self.channel = channel
        self.subscriber_id = subscriber_id
        self.topic = topic
        self.handler = handler
        self.transit_fn = transit_fn
        self.cursor = cursor
        self.scheduled = False
        self.deferred = False

    @property
    def component_id(self) -> str:
        return f"ch:{self.channel.name}:{self.subscriber_id}:{self.topic}"


class Channel:
    """One durable FIFO channel: per-topic logs with per-subscriber cursors.

    Messages survive channel downtime; delivery resumes when the channel
    comes back up. A subscriber sees messages from its subscription point
    onward (no replay of earlier traffic).
    """

    def __init__(self, name: str, loop: EventLoop,
                 redelivery_delay: timedelta = DEFAULT_REDELIVERY_DELAY):
        self.name = name
        self.loop = loop
        self.up = True
        self.redelivery_delay = redelivery_delay
        self._logs: dict[str, list[BusMessage]] = {}
        self._subs: list[_Subscription] = []

    def set_up(self, up: bool) -> None:
        was_up = self.up
        self.up = up
        if up and not was_up:
            for sub in self._subs:
                self._kick(sub)

    def publish(self, msg: BusMessage) -> None:
        if not self.up:
            raise ChannelDown(f"channel {self.name} is down")
        self._logs.setdefault(msg.topic, []).append(msg)
        for sub in self._subs:
            if sub.topic == msg.topic:
                self._kick(sub)

    def subscribe(self, subscriber_id: str, topic: str, handler,
                  transit_fn: Callable[[], timedelta] | None = None) -> _Subscription:
        log = self._logs.setdefault(topic, [])
        sub = _Subscription(self, subscriber_id, topic, handler, transit_fn, cursor=len(log))
        self._subs.append(sub)
        return sub

    def log(self, topic: str) -> list[BusMessage]:
        return list(self._logs.get(topic, ()))

    def _kick(self, sub: _Subscription) -> None:
        if sub.scheduled or sub.deferred:
            return
        if sub.cursor >= len(self._logs.get(sub.topic, ())):
            return
        delay = sub.transit_fn() if sub.transit_fn else timedelta(0)
        sub.scheduled = True
        self.loop.schedule(delay, sub.component_id, lambda: self._deliver(sub))

    def _deliver(self, sub: _Subscription) -> None:
        sub.scheduled = False
        if not self.up:
            # Retained messages poll for channel recovery; this keeps the
            # run's foreground alive until every acknowledgment settles.
            self._redeliver(sub)
            return
        log = self._logs.get(sub.topic, ())
        if sub.cursor >= len(log):
            return
        msg = log[sub.cursor]
        result = sub.handler(msg, self.loop.now(), lambda ok, s=sub: self._complete(s, ok))
        if result == DEFER:
            sub.deferred = True
        elif result:
            self._ack(sub)
        else:
            self._redeliver(sub)

    def _complete(self, sub: _Subscription, ok: bool) -> None:
        if not sub.deferred:
            raise RuntimeError(f"{sub.component_id}: completion without deferred delivery")
        sub.deferred = False
        if ok:
            self._ack(sub)
        else:
            self._redeliver(sub)

    def _ack(self, sub: _Subscription) -> None:
        sub.cursor += 1
        self._kick(sub)

    def _redeliver(self, sub: _Subscription) -> None:
        sub.scheduled = True
        self.loop.schedule(
            self.redelivery_delay, sub.component_id, lambda: self._deliver(sub)
        )


class ChannelDown(Exception):
    """Internal: channel refused a publish. Callers fall back or fail over."""


class FaultTolerantBus:
    """Primary + auxiliary channel pair with heartbeat-driven failover."""

    def __init__(
        self,
        name: str,
        loop: EventLoop,
        payload_store: ObjectStore | None = None,
        *,
        payload_threshold: int = DEFAULT_PAYLOAD_THRESHOLD,
        beat_interval: timedelta = DEFAULT_BEAT_INTERVAL,
        miss_threshold: int = DEFAULT_MISS_THRESHOLD,
        redelivery_delay: timedelta = DEFAULT_REDELIVERY_DELAY,
        id_source: Callable[[], str] | None = None,
        on_transition: Callable[[datetime, str, str], None] | None = None,
    ):
        self.name = name
        self.loop = loop
        self.payload_store = payload_store or ObjectStore(MUTABLE)
        self.payload_threshold = payload_threshold
        self.beat_interval = beat_interval
        self.miss_threshold = miss_threshold
        self.primary = Channel(f"{name}:primary", loop, redelivery_delay)
        self.auxiliary = Channel(f"{name}:auxiliary", loop, redelivery_delay)
        self.health = BusHealth(state=PRIMARY, missed_beats=0, last_beat=loop.now())
        self.transitions: list[tuple[datetime, str, str]] = []
        self._sequences: dict[tuple[str, str], int] = {}
        self._id_source = id_source or (lambda: str(uuid.uuid4()))
        self._on_transition = on_transition

    # -- publishing ----------------------------------------------------------

    def publish(self, publisher: str, topic: str, env: TelemetryEnvelope) -> BusMessage:
        data = serialize(env)
        message_id = self._id_source()
        if len(data) > self.payload_threshold:
            key = f"payloads/{message_id}"
            self.payload_store.put(key, data, self.loop.now())
            body: TelemetryEnvelope | PayloadRef = PayloadRef(MUTABLE, key, len(data))
        else:
            body = env
        return self._dispatch(publisher, topic, message_id, body)

    def publish_event(self, publisher: str, topic: str, payload: dict) -> BusMessage:
        """Publish a small JSON-able event inline (alerts, incidents)."""
        return self._dispatch(publisher, topic, self._id_source(), dict(payload))

    def _dispatch(self, publisher: str, topic: str, message_id: str, body) -> BusMessage:
        seq = self._sequences.get((publisher, topic), 0) + 1
        self._sequences[(publisher, topic)] = seq
        msg = BusMessage(
            message_id=message_id,
            topic=topic,
            publisher=publisher,
            sequence=seq,
            body=body,
            published_at=self.loop.now(),
        )
        for channel in self._channel_order():
            try:
                channel.publish(msg)
                return msg
            except ChannelDown:
                continue
        raise AllChannelsDown(f"bus {self.name}: no channel accepted {topic}/{message_id}")

    def _channel_order(self) -> tuple[Channel, Channel]:
        if self.health.state == PRIMARY:
            return (self.primary, self.auxiliary)
        return (self.auxiliary, self.primary)

    # -- consuming -------------------------------------------------------------

    def subscribe(
        self,
        subscriber_id: str,
        topic: str,
        handler,
        transit_fn: Callable[[], timedelta] | None = None,
    ) -> tuple[_Subscription, _Subscription]:
        """Register a consumer on both channels.

        ``handler(msg, now, done)`` returns True to ack, False to request
        redelivery, or DEFER to acknowledge later through ``done(ok)``.
        """
        return (
            self.primary.subscribe(subscriber_id, topic, handler, transit_fn),
            self.auxiliary.subscribe(subscriber_id, topic, handler, transit_fn),
        )

    def resolve(self, msg: BusMessage) -> TelemetryEnvelope:
        """Inline body, or fetch + reparse a pointered payload byte-exactly."""
        if isinstance(msg.body, PayloadRef):
            return parse_and_validate(self.payload_store.get(msg.body.key).payload)
        return msg.body

    # -- health ----------------------------------------------------------------

    def start_heartbeats(self) -> None:
        """Begin background beat + monitor ticks every ``beat_interval``."""
        beat_id = f"bus:{self.name}:a_beat"
        monitor_id = f"bus:{self.name}:b_monitor"

        def beat() -> None:
            if self.primary.up:
                self._apply_health(record_beat(self.health, self.loop.now()))
            self.loop.schedule(self.beat_interval, beat_id, beat, background=True)

        def monitor() -> None:
            self._apply_health(
                monitor_heartbeat(self.health, self.beat_interval, self.miss_threshold, self.loop.now())
            )
            self.loop.schedule(self.beat_interval, monitor_id, monitor, background=True)

        # Beats sort before the monitor at equal instants (a_ < b_), so an
        # on-time beat is never counted as a miss.
        self.loop.schedule(self.beat_interval, beat_id, beat, background=True)
        self.loop.schedule(self.beat_interval, monitor_id, monitor, background=True)

    def _apply_health(self, new: BusHealth) -> None:
        old = self.health
        self.health = new
        if old.state != new.state:
            event = (self.loop.now(), old.state, new.state)
            self.transitions.append(event)
            if self._on_transition:
                self._on_transition(*event)
