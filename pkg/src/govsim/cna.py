"""Synthetic cloud-native app instances emitting metrics and logs envelopes.

Payload values are fully determined by the configured seed so runs replay
byte-identically; log_ids come from a seeded UUID stream for the same reason.
"""

from __future__ import annotations

import hashlib
import random
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Iterator

from .envelope import STAGE_CNA, TelemetryEnvelope, serialize
from .errors import SinkUnavailable
from .gateway import RETRYABLE_REASONS, RetryPolicy

PATH_QUEUED = "queued"
PATH_DIRECT = "direct"
PATHS = (PATH_QUEUED, PATH_DIRECT)

SERVICE_NAME = "cna-app"

LOG_MESSAGES = (
    "Application started successfully.",
    "Collecting system metrics.",
    "Metrics collected successfully.",
    "Sending data to API Gateway.",
    "Data sent successfully.",
    "Error handling and logging mechanism operational.",
    "System monitoring and logging active.",
    "Routine check completed successfully.",
    "No errors detected in the last cycle.",
    "All systems functional.",
)


@dataclass(frozen=True)
class CnaConfig:
    csp: str
    metrics_count: int
    logs_count: int
    seed: int
    cadence: timedelta = timedelta(seconds=1)
    path: str = PATH_DIRECT

    def validate(self) -> list[str]:
        problems = []
        if not self.csp:
            problems.append("csp must be non-empty")
        if self.metrics_count < 0 or self.logs_count < 0:
            problems.append("counts must be non-negative")
        if self.cadence <= timedelta(0):
            problems.append("cadence must be positive")
        if self.path not in PATHS:
            problems.append(f"path must be one of {PATHS}")
        return problems


def uuid_stream(seed: int) -> Iterator[str]:
    """Reproducible stream of RFC 4122 version-4 UUID strings."""
    rng = random.Random(seed)
    while True:
        yield str(uuid.UUID(int=rng.getrandbits(128), version=4))


def _payload_rng(seed: int, kind: str, now: datetime) -> random.Random:
    material = f"{seed}:{kind}:{now.isoformat()}".encode()
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _metrics_payload(rng: random.Random) -> dict[str, object]:
    return {
        "memory_usage": round(rng.uniform(10.0, 60.0), 1),
        "cpu_usage": round(rng.uniform(0.5, 8.0), 1),
        "disk_usage": round(rng.uniform(2.0, 45.0), 1),
        "bytes_sent": rng.randint(10_000, 100_000_000),
        "bytes_recv": rng.randint(10_000, 100_000_000),
        "additional_metric_1": "value_1",
        "additional_metric_2": "value_2",
    }


def _logs_payload() -> dict[str, object]:
    return {f"log_{i}": msg for i, msg in enumerate(LOG_MESSAGES, start=1)}


def generate_envelope(
    cfg: CnaConfig,
    kind: str,
    now: datetime,
    log_id: str | None = None,
) -> TelemetryEnvelope:
    """One fresh telemetry envelope with only the origin stamp.

    Payload values depend only on (seed, kind, now); the log_id is taken from
    the caller's stream (or a random UUID when none is supplied).
    """
    if kind not in ("metrics", "logs"):
        raise ValueError(f"kind must be metrics or logs, got {kind!r}")
    if kind == "metrics":
        payload = _metrics_payload(_payload_rng(cfg.seed, kind, now))
    else:
        payload = _logs_payload()
    return TelemetryEnvelope(
        csp=cfg.csp,
        data_type=kind,
        error=None,
        governance_data=payload,
        log_id=log_id if log_id is not None else str(uuid.uuid4()),
        service_name=SERVICE_NAME,
        timestamps={STAGE_CNA: now},
    )


def emission_plan(cfg: CnaConfig) -> list[str]:
    """Emission kinds in order: alternating, metrics first, remainder last."""
    plan: list[str] = []
    metrics_left, logs_left = cfg.metrics_count, cfg.logs_count
    while metrics_left or logs_left:
        if metrics_left:
            plan.append("metrics")
            metrics_left -= 1
        if logs_left:
            plan.append("logs")
            logs_left -= 1
    return plan


@dataclass
class EmissionReport:
    metrics: int = 0
    logs: int = 0
    rejected: int = 0
    log_ids: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.metrics + self.logs

    def record(self, kind: str, log_id: str) -> None:
        if kind == "metrics":
            self.metrics += 1
        else:
            self.logs += 1
        self.log_ids.append(log_id)


def run_emitter(
    cfg: CnaConfig,
    sink: Callable[[bytes, datetime], object],
    clock,
    *,
    id_stream: Iterator[str] | None = None,
    retry: RetryPolicy | None = None,
) -> EmissionReport:
    """Emit the configured envelopes at the cadence, synchronously.

    ``sink(raw, now)`` is an ingestion endpoint returning an acknowledgment
    with ``accepted``/``reason`` attributes. Retryable refusals are retried
    per the policy; exhaustion raises SinkUnavailable carrying the partial
    report. The i-th emission (0-based) is stamped ``start + i * cadence``.
    """
    problems = cfg.validate()
    if problems:
        raise ValueError("; ".join(problems))
    ids = id_stream if id_stream is not None else uuid_stream(cfg.seed)
    retry = retry or RetryPolicy()
    report = EmissionReport()
    start = clock.now()
    for i, kind in enumerate(emission_plan(cfg)):
        due = start + i * cfg.cadence
        clock.wait_until(due)
        env = generate_envelope(cfg, kind, due, log_id=next(ids))
        raw = serialize(env)
        backoffs = iter(retry.backoffs())
        while True:
            ack = sink(raw, clock.now())
            if ack.accepted:
                report.record(kind, env.log_id)
                break
            if ack.reason not in RETRYABLE_REASONS:
                report.rejected += 1
                break
            pause = next(backoffs, None)
            if pause is None:
                raise SinkUnavailable(
                    f"sink refused {env.log_id} after {retry.attempts} attempts",
                    report=report,
                )
            clock.wait_until(clock.now() + pause)
    return report
