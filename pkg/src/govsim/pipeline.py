"""Data manipulation chain: convert, filter, aggregate, archive.

Only the converter and the archiver add stage stamps; filtering and
aggregation are pure transforms between them. Unprocessable input is
diverted to a dead-letter sink as JSON-lines records.
"""

from __future__ import annotations

import json
import re
import shlex
import uuid
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Iterator

from .envelope import (
    STAGE_CNA,
    STAGE_IMS_ARCHIVER,
    STAGE_IMS_CONVERTER,
    TelemetryEnvelope,
    canonical_key,
    parse_and_validate,
    serialize,
    stamp_stage,
    validate_document,
)
from .errors import GovSimError, UnrecognizedFormat
from .storage import ArchiveStores, StoredObject

PREDICATES = ("equals", "not_equals", "in_set")

_SIMPLE_FIELDS = ("CSP", "data_type", "error", "log_id", "service_name")
_NESTED_FIELDS = ("governance_data", "timestamps")
_INT_RE = re.compile(r"^[+-]?\d+$")

_MISSING = object()


@dataclass(frozen=True)
class FilterRule:
    """Single predicate against an envelope field path.

    Paths are either a top-level field name or ``governance_data.<key>`` /
    ``timestamps.<stage>``. A missing nested value satisfies only
    ``not_equals``.
    """

    field_path: str
    predicate: str
    value: object

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise ValueError(f"predicate must be one of {PREDICATES}")
        root, _, sub = self.field_path.partition(".")
        if root in _SIMPLE_FIELDS:
            if sub:
                raise ValueError(f"field {root!r} takes no sub-path")
        elif root in _NESTED_FIELDS:
            if not sub:
                raise ValueError(f"field {root!r} requires a sub-path")
        else:
            raise ValueError(f"unknown envelope field {self.field_path!r}")
        if self.predicate == "in_set":
            object.__setattr__(self, "value", frozenset(self.value))

    def _lookup(self, env: TelemetryEnvelope):
        root, _, sub = self.field_path.partition(".")
        if root == "governance_data":
            return env.governance_data.get(sub, _MISSING)
        if root == "timestamps":
            dt = env.timestamps.get(sub)
            return _MISSING if dt is None else dt
        return getattr(env, "csp" if root == "CSP" else root)

    def matches(self, env: TelemetryEnvelope) -> bool:
        actual = self._lookup(env)
        if self.predicate == "equals":
            return actual is not _MISSING and actual == self.value
        if self.predicate == "not_equals":
            return actual is _MISSING or actual != self.value
        return actual is not _MISSING and actual in self.value


def apply_filter(rules: Iterable[FilterRule], env: TelemetryEnvelope) -> bool:
    """Keep iff every rule holds; an empty rule list keeps everything."""
    return all(rule.matches(env) for rule in rules)


@dataclass(frozen=True)
class AggregationWindow:
    size: int
    group_fields: tuple[str, ...] = ("CSP", "data_type")

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("window size must be >= 1")
        if not self.group_fields:
            raise ValueError("group_fields must be non-empty")

    def key_for(self, env: TelemetryEnvelope) -> tuple:
        return tuple(
            env.csp if f == "CSP" else getattr(env, f) for f in self.group_fields
        )


@dataclass(frozen=True)
class Batch:
    group_key: tuple
    envelopes: tuple[TelemetryEnvelope, ...]
    sealed: bool
    partial: bool = False


class BatchAggregator:
    """Groups envelopes by key, sealing a batch per full window."""

    def __init__(self, window: AggregationWindow):
        self.window = window
        self._pending: dict[tuple, list[TelemetryEnvelope]] = {}

    def add(self, env: TelemetryEnvelope) -> Batch | None:
        key = self.window.key_for(env)
        group = self._pending.setdefault(key, [])
        group.append(env)
        if len(group) == self.window.size:
            del self._pending[key]
            return Batch(group_key=key, envelopes=tuple(group), sealed=True)
        return None

    def flush(self) -> list[Batch]:
        """Seal and return the non-empty partial groups (stream close)."""
        out = [
            Batch(group_key=key, envelopes=tuple(group), sealed=True, partial=True)
            for key, group in self._pending.items()
            if group
        ]
        self._pending.clear()
        return out


def aggregate(window: AggregationWindow, envelopes: Iterable[TelemetryEnvelope]) -> Iterator[Batch]:
    agg = BatchAggregator(window)
    for env in envelopes:
        batch = agg.add(env)
        if batch is not None:
            yield batch
    yield from agg.flush()


# --- converter ----------------------------------------------------------------


def _coerce(text: str) -> object:
    if _INT_RE.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def _parse_kv_record(text: str, now: datetime, log_id_source) -> dict:
    try:
        tokens = shlex.split(text)
    except ValueError as exc:
        raise UnrecognizedFormat(f"unquotable line record: {exc}") from exc
    if not tokens or not all("=" in t for t in tokens):
        raise UnrecognizedFormat("line record must be space-separated key=value pairs")
    top: dict[str, object] = {}
    gov: dict[str, object] = {}
    timestamps: dict[str, str] = {}
    for token in tokens:
        key, _, value = token.partition("=")
        if key in ("CSP", "data_type", "error", "service_name", "log_id"):
            top[key] = value
        elif key == STAGE_CNA:
            timestamps[STAGE_CNA] = value
        else:
            gov[key] = _coerce(value)
    if STAGE_CNA not in timestamps:
        timestamps[STAGE_CNA] = now.isoformat(timespec="microseconds")
    return {
        "CSP": top.get("CSP", ""),
        "data_type": top.get("data_type", ""),
        "error": top.get("error"),
        "governance_data": gov,
        "log_id": top.get("log_id") or log_id_source(),
        "service_name": top.get("service_name", SERVICE_DEFAULT),
        "timestamps": timestamps,
    }


SERVICE_DEFAULT = "cna-app"


def convert(
    raw: bytes | str | TelemetryEnvelope,
    now: datetime,
    *,
    log_id_source=None,
) -> TelemetryEnvelope:
    """Standardize one telemetry record and add the converter stamp.

    Canonical JSON (or an already-parsed envelope) passes through unchanged
    apart from the stamp. The alternate accepted format is a single
    ``key=value`` line per record. Anything else raises UnrecognizedFormat,
    which callers route to the dead-letter sink.
    """
    if isinstance(raw, TelemetryEnvelope):
        return stamp_stage(raw, STAGE_IMS_CONVERTER, now)
    log_id_source = log_id_source or (lambda: str(uuid.uuid4()))
    if isinstance(raw, (bytes, bytearray)):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise UnrecognizedFormat(f"not UTF-8 text: {exc}") from exc
    else:
        text = raw
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            env = parse_and_validate(stripped)
        except GovSimError as exc:
            raise UnrecognizedFormat(f"invalid canonical document: {exc}") from exc
        return stamp_stage(env, STAGE_IMS_CONVERTER, now)
    if not stripped or len(stripped.splitlines()) != 1:
        raise UnrecognizedFormat("expected one canonical document or one key=value line")
    doc = _parse_kv_record(stripped, now, log_id_source)
    try:
        env = validate_document(doc)
    except GovSimError as exc:
        raise UnrecognizedFormat(f"invalid line record: {exc}") from exc
    return stamp_stage(env, STAGE_IMS_CONVERTER, now)


def convert_lines(raw: bytes | str, now: datetime, *, log_id_source=None) -> list[TelemetryEnvelope]:
    """Convert a multi-record payload, one ``key=value`` record per line."""
    if isinstance(raw, (bytes, bytearray)):
        raw = raw.decode("utf-8")
    return [
        convert(line, now, log_id_source=log_id_source)
        for line in raw.splitlines()
        if line.strip()
    ]


# --- archiver -------------------------------------------------------------------


def archive(env: TelemetryEnvelope, stores: ArchiveStores, now: datetime) -> StoredObject:
    """Stamp, route by data_type, and store under ``<csp>/<log_id>``.

    metrics -> mutable store; logs and traces -> immutable store. Duplicate
    deliveries of an already-archived log_id succeed without writing.
    """
    stamped = stamp_stage(env, STAGE_IMS_ARCHIVER, now)
    store = stores.for_data_type(stamped.data_type)
    key = canonical_key(stamped)
    if store.contains(key):
        return store.get(key)
    return store.put(key, serialize(stamped), now)


# --- dead letters ------------------------------------------------------------------


@dataclass(frozen=True)
class DeadLetterRecord:
    reason: str
    received_at: datetime
    raw_excerpt: str


class DeadLetterSink:
    """Collects unprocessable records; exports as JSON lines."""

    EXCERPT_LIMIT = 200

    def __init__(self):
        self.records: list[DeadLetterRecord] = []

    def add(self, reason: str, received_at: datetime, raw: bytes | str) -> DeadLetterRecord:
        if isinstance(raw, (bytes, bytearray)):
            text = raw.decode("utf-8", errors="replace")
        else:
            text = raw
        record = DeadLetterRecord(
            reason=reason,
            received_at=received_at,
            raw_excerpt=text[: self.EXCERPT_LIMIT],
        )
        self.records.append(record)
        return record

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> bytes:
        lines = [
            json.dumps(
                {
                    "reason": r.reason,
                    "received_at": r.received_at.isoformat(timespec="microseconds"),
                    "raw_excerpt": r.raw_excerpt,
                },
                ensure_ascii=False,
            )
            for r in self.records
        ]
        return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
