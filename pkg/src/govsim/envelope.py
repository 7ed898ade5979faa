"""Canonical telemetry envelope: schema, validation, stage stamping, keys.

The wire format is a UTF-8 JSON document with exactly these top-level fields:
``CSP``, ``data_type``, ``error``, ``governance_data``, ``log_id``,
``service_name``, ``timestamps``. Timestamps are RFC 3339 instants with
microsecond precision and an explicit ``+00:00`` offset; their insertion
order records the envelope's progress through the pipeline stages.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Mapping

from .errors import (
    DuplicateStage,
    InvalidDataType,
    InvalidTimestamp,
    MalformedDocument,
    NonMonotonicStamp,
    SchemaViolation,
)

DATA_TYPES = ("metrics", "logs", "traces")

# Stage names used by the two-cloud reference topology. Topologies may extend
# this set; validation only requires names to be non-empty strings.
STAGE_CNA = "cna_timestamp"
STAGE_RG1_GATEWAY = "RG_1_API_Gateway_timestamp"
STAGE_RG1_FORWARDER = "RG_1_SQS_Forwarder_timestamp"
STAGE_IMS_GATEWAY = "RG_GOV_IMS_API_Gateway_timestamp"
STAGE_IMS_CONVERTER = "RG_GOV_IMS_Converter_timestamp"
STAGE_IMS_ARCHIVER = "RG_GOV_IMS_Archiver_timestamp"

STANDARD_STAGES = (
    STAGE_CNA,
    STAGE_RG1_GATEWAY,
    STAGE_RG1_FORWARDER,
    STAGE_IMS_GATEWAY,
    STAGE_IMS_CONVERTER,
    STAGE_IMS_ARCHIVER,
)

_REQUIRED_FIELDS = frozenset(
    {"CSP", "data_type", "governance_data", "log_id", "service_name", "timestamps"}
)
_ALL_FIELDS = _REQUIRED_FIELDS | {"error"}
_SCALAR_TYPES = (str, int, float, bool, type(None))


def format_instant(dt: datetime) -> str:
    """Render a UTC instant as RFC 3339 with 6-digit microseconds."""
    if dt.tzinfo is None or dt.utcoffset() != timedelta(0):
        raise ValueError(f"timestamps must be UTC-aware: {dt!r}")
    return dt.isoformat(timespec="microseconds")


def parse_instant(text: str) -> datetime:
    """Parse a wire timestamp, rejecting anything but the canonical form."""
    if not isinstance(text, str):
        raise InvalidTimestamp(f"timestamp must be a string, got {type(text).__name__}")
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise InvalidTimestamp(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None or dt.utcoffset() != timedelta(0):
        raise InvalidTimestamp(f"timestamp {text!r} is not an explicit UTC instant")
    if format_instant(dt) != text:
        # Enforces the +00:00 offset and 6-digit fraction so round-trips are
        # byte-exact against the golden documents.
        raise InvalidTimestamp(f"timestamp {text!r} is not in canonical form")
    return dt


@dataclass(frozen=True)
class TelemetryEnvelope:
    """Immutable canonical governance record.

    ``stamp_stage`` returns a new value; instances are safe to share across
    concurrent pipeline stages.
    """

    csp: str
    data_type: str
    error: str | None
    governance_data: dict[str, object]
    log_id: str
    service_name: str
    timestamps: dict[str, datetime]

    @property
    def origin_time(self) -> datetime:
        return self.timestamps[STAGE_CNA]

    def latest_stamp(self) -> tuple[str, datetime]:
        stage = next(reversed(self.timestamps))
        return stage, self.timestamps[stage]


def _reject_duplicate_keys(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise SchemaViolation(f"duplicate key {key!r}")
        obj[key] = value
    return obj


def parse_and_validate(raw: bytes | str) -> TelemetryEnvelope:
    """Parse a canonical JSON document into a validated envelope.

    Field values round-trip bit-exactly; any invariant violation rejects the
    document with the matching error type.
    """
    if isinstance(raw, (bytes, bytearray)):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from exc
    else:
        text = raw
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except SchemaViolation:
        raise
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedDocument(f"not JSON: {exc}") from exc
    return validate_document(doc)


def validate_document(doc: object) -> TelemetryEnvelope:
    """Validate an already-decoded document object."""
    if not isinstance(doc, dict):
        raise SchemaViolation(f"document root must be an object, got {type(doc).__name__}")
    keys = set(doc)
    missing = _REQUIRED_FIELDS - keys
    if missing:
        raise SchemaViolation(f"missing required field(s): {sorted(missing)}")
    extra = keys - _ALL_FIELDS
    if extra:
        raise SchemaViolation(f"unknown top-level field(s): {sorted(extra)}")

    csp = doc["CSP"]
    if not isinstance(csp, str) or not csp:
        raise SchemaViolation("CSP must be a non-empty string")

    data_type = doc["data_type"]
    if data_type not in DATA_TYPES:
        raise InvalidDataType(f"data_type {data_type!r} not one of {DATA_TYPES}")

    error = doc.get("error")
    if error is not None and not isinstance(error, str):
        raise SchemaViolation("error must be a string or null")

    gov = doc["governance_data"]
    if not isinstance(gov, dict):
        raise SchemaViolation("governance_data must be an object")
    for k, v in gov.items():
        if not isinstance(v, _SCALAR_TYPES):
            raise SchemaViolation(f"governance_data[{k!r}] must be a scalar")

    log_id = doc["log_id"]
    if not isinstance(log_id, str):
        raise SchemaViolation("log_id must be a string")
    try:
        uuid.UUID(log_id)
    except ValueError as exc:
        raise SchemaViolation(f"log_id {log_id!r} is not a UUID") from exc

    service = doc["service_name"]
    if not isinstance(service, str):
        raise SchemaViolation("service_name must be a string")

    ts_doc = doc["timestamps"]
    if not isinstance(ts_doc, dict):
        raise InvalidTimestamp("timestamps must be an object")
    if STAGE_CNA not in ts_doc:
        raise InvalidTimestamp(f"timestamps must contain the origin stamp {STAGE_CNA!r}")
    timestamps: dict[str, datetime] = {}
    previous: datetime | None = None
    for stage, value in ts_doc.items():
        if not isinstance(stage, str) or not stage:
            raise InvalidTimestamp(f"stage name {stage!r} must be a non-empty string")
        instant = parse_instant(value)
        if previous is not None and instant < previous:
            raise InvalidTimestamp(
                f"stage {stage!r} at {value} precedes the previous stamp {format_instant(previous)}"
            )
        timestamps[stage] = instant
        previous = instant

    return TelemetryEnvelope(
        csp=csp,
        data_type=data_type,
        error=error,
        governance_data=dict(gov),
        log_id=log_id,
        service_name=service,
        timestamps=timestamps,
    )


def to_document(env: TelemetryEnvelope) -> dict:
    """Envelope as a plain JSON-ready dict in canonical field order."""
    return {
        "CSP": env.csp,
        "data_type": env.data_type,
        "error": env.error,
        "governance_data": dict(env.governance_data),
        "log_id": env.log_id,
        "service_name": env.service_name,
        "timestamps": {stage: format_instant(dt) for stage, dt in env.timestamps.items()},
    }


def serialize(env: TelemetryEnvelope) -> bytes:
    """Canonical UTF-8 JSON bytes (2-space indent, insertion-ordered)."""
    return (json.dumps(to_document(env), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def stamp_stage(env: TelemetryEnvelope, stage: str, now: datetime) -> TelemetryEnvelope:
    """Append a stage timestamp, preserving write-once and monotonic order."""
    if not stage:
        raise ValueError("stage name must be non-empty")
    if stage in env.timestamps:
        raise DuplicateStage(f"stage {stage!r} already stamped on {env.log_id}")
    _, last = env.latest_stamp()
    if now < last:
        raise NonMonotonicStamp(
            f"stamp for {stage!r} at {format_instant(now)} precedes {format_instant(last)}"
        )
    timestamps = dict(env.timestamps)
    timestamps[stage] = now
    return TelemetryEnvelope(
        csp=env.csp,
        data_type=env.data_type,
        error=env.error,
        governance_data=dict(env.governance_data),
        log_id=env.log_id,
        service_name=env.service_name,
        timestamps=timestamps,
    )


def canonical_key(env: TelemetryEnvelope) -> str:
    """Storage object key: ``<csp>/<log_id>``."""
    return f"{env.csp}/{env.log_id}"
