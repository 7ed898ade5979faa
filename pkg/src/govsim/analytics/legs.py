"""Stage-to-stage delay ("leg") computation over envelope timestamp chains."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from ..envelope import (
    STAGE_CNA,
    STAGE_IMS_ARCHIVER,
    STAGE_IMS_CONVERTER,
    STAGE_IMS_GATEWAY,
    STAGE_RG1_FORWARDER,
    STAGE_RG1_GATEWAY,
    TelemetryEnvelope,
)
from ..errors import NegativeDelay


@dataclass(frozen=True)
class LegDef:
    name: str
    end_stage: str
    start_stage: str

    def __post_init__(self):
        if self.end_stage == self.start_stage:
            raise ValueError("leg endpoints must differ")


@dataclass(frozen=True)
class LegDelayRecord:
    """Per-envelope delays in milliseconds, keyed by leg name.

    A leg appears only when both endpoint stamps exist on the envelope.
    """

    log_id: str
    csp: str
    delays: Mapping[str, float]


#: Leg definitions of the two-cloud reference topology, per CSP. The queued
#: (high-demand) path has five legs; the direct path skips the RG-local hops.
DEFAULT_LEG_SETS: dict[str, tuple[LegDef, ...]] = {
    "AWS": (
        LegDef("Leg 1", STAGE_RG1_GATEWAY, STAGE_CNA),
        LegDef("Leg 2", STAGE_RG1_FORWARDER, STAGE_RG1_GATEWAY),
        LegDef("Leg 3", STAGE_IMS_GATEWAY, STAGE_RG1_FORWARDER),
        LegDef("Leg 4", STAGE_IMS_CONVERTER, STAGE_IMS_GATEWAY),
        LegDef("Leg 5", STAGE_IMS_ARCHIVER, STAGE_IMS_CONVERTER),
    ),
    "IBM": (
        LegDef("Leg 1", STAGE_IMS_GATEWAY, STAGE_CNA),
        LegDef("Leg 4", STAGE_IMS_CONVERTER, STAGE_IMS_GATEWAY),
        LegDef("Leg 5", STAGE_IMS_ARCHIVER, STAGE_IMS_CONVERTER),
    ),
}


def compute_legs(defs: Iterable[LegDef], env: TelemetryEnvelope) -> LegDelayRecord:
    """Delays (end - start, in ms at microsecond resolution) per defined leg.

    Legs with a missing endpoint are omitted; a negative difference flags
    corrupt input via NegativeDelay.
    """
    delays: dict[str, float] = {}
    for leg in defs:
        start = env.timestamps.get(leg.start_stage)
        end = env.timestamps.get(leg.end_stage)
        if start is None or end is None:
            continue
        delta_us = round((end - start).total_seconds() * 1_000_000)
        if delta_us < 0:
            raise NegativeDelay(
                f"{leg.name}: {leg.end_stage} precedes {leg.start_stage} on {env.log_id}"
            )
        delays[leg.name] = delta_us / 1000.0
    return LegDelayRecord(log_id=env.log_id, csp=env.csp, delays=delays)


def leg_records(
    envelopes: Iterable[TelemetryEnvelope],
    leg_sets: Mapping[str, Iterable[LegDef]] | None = None,
) -> list[LegDelayRecord]:
    """Compute records for a batch, picking each envelope's CSP leg set.

    Envelopes from a CSP without a configured leg set yield empty records.
    """
    leg_sets = DEFAULT_LEG_SETS if leg_sets is None else leg_sets
    return [compute_legs(leg_sets.get(env.csp, ()), env) for env in envelopes]
