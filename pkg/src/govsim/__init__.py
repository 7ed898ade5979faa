"""govsim: a desk-scale simulation of a multi-cloud telemetry governance pipeline.

Synthetic cloud apps emit metrics/logs envelopes that flow through push/pull
ingestion, a fault-tolerant FIFO bus with heartbeat failover, a
convert/filter/aggregate/archive chain, and mutable/WORM object stores;
pluggable analytics compute stage-to-stage delays, summary statistics,
compliance assessments, and desired-state drift.
"""

from .envelope import (  # noqa: F401
    TelemetryEnvelope,
    canonical_key,
    parse_and_validate,
    serialize,
    stamp_stage,
)
from .errors import GovSimError  # noqa: F401
from .runner import RunReport, Runner, run_scenario  # noqa: F401
from .scenario import ScenarioConfig, load_config  # noqa: F401

__version__ = "0.1.0"
