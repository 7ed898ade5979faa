"""Declarative scenario documents: topology, latency, faults, desired state.

A scenario file is YAML (key/value with nested blocks). It fully determines a
run — emitters, wiring, latency distributions, fault windows, bus parameters,
retention, filter rules, leg definitions — and doubles as the desired-state
document for the drift detector.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import yaml

from .bus import (
    DEFAULT_BEAT_INTERVAL,
    DEFAULT_MISS_THRESHOLD,
    DEFAULT_PAYLOAD_THRESHOLD,
    DEFAULT_REDELIVERY_DELAY,
    STANDARD_TOPICS,
)
from .clock import DEFAULT_START
from .cna import PATH_QUEUED, CnaConfig
from .envelope import (
    STAGE_CNA,
    STAGE_IMS_ARCHIVER,
    STAGE_IMS_CONVERTER,
    STAGE_IMS_GATEWAY,
    parse_instant,
)
from .errors import ConfigInvalid, GovSimError
from .analytics.drift import DesiredState
from .analytics.legs import DEFAULT_LEG_SETS, LegDef
from .pipeline import FilterRule
from .storage import RetentionPolicy

HOPS = (
    "cna_to_rg_gateway",
    "rg_gateway_to_forwarder",
    "forwarder_to_ims_gateway",
    "cna_to_ims_gateway",
    "ims_gateway_to_converter",
    "converter_to_archiver",
)

#: Latency regimes of the reference deployment: same-region ingress is tens
#: of milliseconds, cross-region ingress is ~70 ms, the queued cross-RG hop
#: is ~700 ms, and pipeline hops sit around 100 ms.
DEFAULT_LATENCY_SPEC: dict[str, dict] = {
    "cna_to_rg_gateway": {"dist": "lognormal", "mu": 3.05, "sigma": 0.30},
    "rg_gateway_to_forwarder": {"dist": "lognormal", "mu": 3.90, "sigma": 0.40},
    "forwarder_to_ims_gateway": {"dist": "lognormal", "mu": 6.55, "sigma": 0.05},
    "cna_to_ims_gateway": {"dist": "lognormal", "mu": 4.28, "sigma": 0.15},
    "ims_gateway_to_converter": {"dist": "lognormal", "mu": 4.50, "sigma": 0.30},
    "converter_to_archiver": {"dist": "lognormal", "mu": 4.55, "sigma": 0.35},
}


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit stream seed derived from a master seed and a label."""
    digest = hashlib.blake2b(f"{master}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class LatencyModel:
    """Per-hop delay distribution: fixed, uniform[a, b], or lognormal(mu, sigma).

    All parameters are in milliseconds (lognormal mu/sigma act on ln(ms));
    samples are rounded to whole microseconds, never negative.
    """

    dist: str
    ms: float | None = None
    lo_ms: float | None = None
    hi_ms: float | None = None
    mu: float | None = None
    sigma: float | None = None

    def sample(self, rng: random.Random) -> timedelta:
        if self.dist == "fixed":
            value = self.ms
        elif self.dist == "uniform":
            value = rng.uniform(self.lo_ms, self.hi_ms)
        else:
            value = rng.lognormvariate(self.mu, self.sigma)
        return timedelta(microseconds=max(0, round(value * 1000)))

    @classmethod
    def from_spec(cls, spec: dict, where: str, problems: list[str]) -> "LatencyModel":
        dist = spec.get("dist")
        if dist == "fixed":
            if not isinstance(spec.get("ms"), (int, float)) or spec["ms"] < 0:
                problems.append(f"{where}: fixed latency needs ms >= 0")
                return cls(dist="fixed", ms=0.0)
            return cls(dist="fixed", ms=float(spec["ms"]))
        if dist == "uniform":
            lo, hi = spec.get("lo_ms"), spec.get("hi_ms")
            ok = all(isinstance(v, (int, float)) for v in (lo, hi)) and 0 <= lo <= hi
            if not ok:
                problems.append(f"{where}: uniform latency needs 0 <= lo_ms <= hi_ms")
                return cls(dist="fixed", ms=0.0)
            return cls(dist="uniform", lo_ms=float(lo), hi_ms=float(hi))
        if dist == "lognormal":
            mu, sigma = spec.get("mu"), spec.get("sigma")
            ok = all(isinstance(v, (int, float)) for v in (mu, sigma)) and sigma >= 0
            if not ok:
                problems.append(f"{where}: lognormal latency needs mu and sigma >= 0")
                return cls(dist="fixed", ms=0.0)
            return cls(dist="lognormal", mu=float(mu), sigma=float(sigma))
        problems.append(f"{where}: dist must be fixed, uniform, or lognormal")
        return cls(dist="fixed", ms=0.0)


@dataclass(frozen=True)
class BusParams:
    payload_threshold: int = DEFAULT_PAYLOAD_THRESHOLD
    beat_interval: timedelta = DEFAULT_BEAT_INTERVAL
    miss_threshold: int = DEFAULT_MISS_THRESHOLD
    redelivery_delay: timedelta = DEFAULT_REDELIVERY_DELAY


@dataclass(frozen=True)
class FaultWindow:
    component: str
    down_at: timedelta
    up_at: timedelta | None  # None -> down for the rest of the run


@dataclass(frozen=True)
class RangeRule:
    """Inline SLO check on a leg: target ``"<csp>/<leg name>"``."""

    target: str
    lo: float | None
    hi: float | None


@dataclass(frozen=True)
class AnalyticsConfig:
    inline: bool = False
    alert_window: timedelta = timedelta(seconds=10)
    range_rules: tuple[RangeRule, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    start_time: datetime
    rg_count: int
    da_count: int
    cnas: tuple[CnaConfig, ...]
    bus: BusParams
    latency: dict[str, LatencyModel]
    faults: tuple[FaultWindow, ...]
    retention: RetentionPolicy
    filter_rules: tuple[FilterRule, ...]
    leg_sets: dict[str, tuple[LegDef, ...]]
    desired_state: DesiredState
    analytics: AnalyticsConfig = AnalyticsConfig()
    max_sim: timedelta | None = None

    def queued_cnas(self) -> list[tuple[int, CnaConfig]]:
        """(1-based RG index, config) for CNAs on the queued path."""
        return [(i + 1, cna) for i, cna in enumerate(self.cnas) if cna.path == PATH_QUEUED]

    def component_names(self) -> list[str]:
        names = [
            "ims-gateway",
            "ims-bus-primary",
            "ims-bus-auxiliary",
            "converter",
            "archiver",
            "aggregator",
            "mutable-store",
            "immutable-store",
        ]
        for idx, _ in self.queued_cnas():
            names += [
                f"rg{idx}-gateway",
                f"rg{idx}-forwarder",
                f"rg{idx}-bus-primary",
                f"rg{idx}-bus-auxiliary",
            ]
        return sorted(names)

    def topology_stages(self) -> set[str]:
        stages = {STAGE_CNA, STAGE_IMS_GATEWAY, STAGE_IMS_CONVERTER, STAGE_IMS_ARCHIVER}
        for idx, _ in self.queued_cnas():
            stages.add(f"RG_{idx}_API_Gateway_timestamp")
            stages.add(f"RG_{idx}_SQS_Forwarder_timestamp")
        return stages


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Re-key every seeded stream from a new master seed."""
    cnas = tuple(
        replace(cna, seed=derive_seed(seed, f"cna:{i}")) for i, cna in enumerate(cfg.cnas)
    )
    return replace(cfg, seed=seed, cnas=cnas)


def _timedelta_ms(value, default: timedelta, where: str, problems: list[str]) -> timedelta:
    if value is None:
        return default
    if not isinstance(value, (int, float)) or value <= 0:
        problems.append(f"{where}: must be a positive number of milliseconds")
        return default
    return timedelta(milliseconds=float(value))


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse and cross-validate a scenario file.

    All problems are collected and reported together in ConfigInvalid.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigInvalid([f"unparseable YAML: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigInvalid(["scenario document must be a mapping"])
    return parse_config(doc)


def parse_config(doc: dict) -> ScenarioConfig:
    problems: list[str] = []

    name = doc.get("name", "scenario")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        problems.append("seed: must be an integer")
        seed = 0

    start_time = DEFAULT_START
    if "start_time" in doc:
        try:
            start_time = parse_instant(doc["start_time"])
        except GovSimError as exc:
            problems.append(f"start_time: {exc}")

    raw_cnas = doc.get("cnas", [])
    if not isinstance(raw_cnas, list):
        problems.append("cnas: must be a list")
        raw_cnas = []
    cnas: list[CnaConfig] = []
    for i, raw in enumerate(raw_cnas):
        where = f"cnas[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{where}: must be a mapping")
            continue
        cna = CnaConfig(
            csp=str(raw.get("csp", "")),
            metrics_count=raw.get("metrics_count", 0),
            logs_count=raw.get("logs_count", 0),
            seed=raw.get("seed", derive_seed(seed, f"cna:{i}")),
            cadence=_timedelta_ms(
                raw.get("cadence_ms"), timedelta(seconds=1), f"{where}.cadence_ms", problems
            ),
            path=raw.get("path", "direct"),
        )
        for problem in cna.validate():
            problems.append(f"{where}: {problem}")
        cnas.append(cna)
    seen_seeds: set[int] = set()
    for i, cna in enumerate(cnas):
        if cna.seed in seen_seeds:
            problems.append(
                f"cnas[{i}]: seed {cna.seed} reused; log_id streams must not collide"
            )
        seen_seeds.add(cna.seed)

    rg_count = doc.get("rg_count", len(cnas))
    da_count = doc.get("da_count", 1)
    if not isinstance(rg_count, int) or rg_count < 1:
        problems.append("rg_count: must be an integer >= 1")
        rg_count = max(1, len(cnas))
    elif rg_count != len(cnas):
        problems.append(
            f"rg_count: {rg_count} but {len(cnas)} CNA(s) declared (one CNA per RG)"
        )
    if not isinstance(da_count, int) or da_count < 1:
        problems.append("da_count: must be an integer >= 1")
        da_count = 1

    raw_bus = doc.get("bus", {}) or {}
    threshold = raw_bus.get("payload_threshold_bytes", DEFAULT_PAYLOAD_THRESHOLD)
    if not isinstance(threshold, int) or threshold < 1:
        problems.append("bus.payload_threshold_bytes: must be a positive integer")
        threshold = DEFAULT_PAYLOAD_THRESHOLD
    miss_threshold = raw_bus.get("miss_threshold", DEFAULT_MISS_THRESHOLD)
    if not isinstance(miss_threshold, int) or miss_threshold < 1:
        problems.append("bus.miss_threshold: must be an integer >= 1")
        miss_threshold = DEFAULT_MISS_THRESHOLD
    bus = BusParams(
        payload_threshold=threshold,
        beat_interval=_timedelta_ms(
            raw_bus.get("beat_interval_ms"), DEFAULT_BEAT_INTERVAL, "bus.beat_interval_ms", problems
        ),
        miss_threshold=miss_threshold,
        redelivery_delay=_timedelta_ms(
            raw_bus.get("redelivery_delay_ms"),
            DEFAULT_REDELIVERY_DELAY,
            "bus.redelivery_delay_ms",
            problems,
        ),
    )

    latency_spec = dict(DEFAULT_LATENCY_SPEC)
    raw_latency = doc.get("latency_ms", {}) or {}
    if not isinstance(raw_latency, dict):
        problems.append("latency_ms: must be a mapping of hop -> distribution")
        raw_latency = {}
    for hop, spec in raw_latency.items():
        if hop not in HOPS:
            problems.append(f"latency_ms.{hop}: unknown hop (expected one of {', '.join(HOPS)})")
            continue
        latency_spec[hop] = spec
    latency = {
        hop: LatencyModel.from_spec(spec, f"latency_ms.{hop}", problems)
        for hop, spec in latency_spec.items()
    }

    retention_days = doc.get("retention_days", 365)
    if not isinstance(retention_days, (int, float)) or retention_days <= 0:
        problems.append("retention_days: must be a positive number")
        retention_days = 365
    retention = RetentionPolicy(period=timedelta(days=float(retention_days)))

    filter_rules: list[FilterRule] = []
    for i, raw in enumerate(doc.get("filter_rules", []) or []):
        try:
            filter_rules.append(
                FilterRule(
                    field_path=raw["field"],
                    predicate=raw["predicate"],
                    value=raw["value"],
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"filter_rules[{i}]: {exc}")

    # Build an interim config to learn the wired stages/components, then
    # validate everything that references them.
    interim = ScenarioConfig(
        name=str(name),
        seed=seed,
        start_time=start_time,
        rg_count=rg_count if isinstance(rg_count, int) else len(cnas),
        da_count=da_count,
        cnas=tuple(cnas),
        bus=bus,
        latency=latency,
        faults=(),
        retention=retention,
        filter_rules=tuple(filter_rules),
        leg_sets={},
        desired_state=DesiredState.from_dict({}),
    )
    known_stages = interim.topology_stages()
    known_components = set(interim.component_names())

    leg_sets: dict[str, tuple[LegDef, ...]] = {}
    raw_legs = doc.get("legs")
    if raw_legs is None:
        leg_sets = {
            csp: legs for csp, legs in DEFAULT_LEG_SETS.items()
            if any(c.csp == csp for c in cnas)
        }
    elif not isinstance(raw_legs, dict):
        problems.append("legs: must map CSP -> list of leg definitions")
    else:
        for csp, defs in raw_legs.items():
            parsed = []
            for j, raw in enumerate(defs or []):
                where = f"legs.{csp}[{j}]"
                try:
                    leg = LegDef(
                        name=str(raw["name"]),
                        end_stage=str(raw["end"]),
                        start_stage=str(raw["start"]),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    problems.append(f"{where}: {exc}")
                    continue
                for stage in (leg.start_stage, leg.end_stage):
                    if stage not in known_stages:
                        problems.append(f"{where}: stage {stage!r} not in the wiring")
                parsed.append(leg)
            leg_sets[str(csp)] = tuple(parsed)

    faults: list[FaultWindow] = []
    for i, raw in enumerate(doc.get("faults", []) or []):
        where = f"faults[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{where}: must be a mapping")
            continue
        component = str(raw.get("component", ""))
        if component not in known_components:
            problems.append(f"{where}: unknown component {component!r}")
        down_at = raw.get("down_at_s")
        up_at = raw.get("up_at_s")
        if not isinstance(down_at, (int, float)) or down_at < 0:
            problems.append(f"{where}: down_at_s must be a number >= 0")
            down_at = 0
        if up_at is not None and (not isinstance(up_at, (int, float)) or up_at <= down_at):
            problems.append(f"{where}: up_at_s must exceed down_at_s")
            up_at = None
        faults.append(
            FaultWindow(
                component=component,
                down_at=timedelta(seconds=float(down_at)),
                up_at=None if up_at is None else timedelta(seconds=float(up_at)),
            )
        )

    raw_analytics = doc.get("analytics", {}) or {}
    range_rules = []
    for i, raw in enumerate(raw_analytics.get("range_rules", []) or []):
        where = f"analytics.range_rules[{i}]"
        target = str(raw.get("target", ""))
        csp_part = target.split("/", 1)[0]
        if not any(c.csp == csp_part for c in cnas):
            problems.append(f"{where}: target {target!r} does not name a configured CSP")
        lo, hi = raw.get("lo"), raw.get("hi")
        if lo is None and hi is None:
            problems.append(f"{where}: needs lo and/or hi")
        range_rules.append(
            RangeRule(
                target=target,
                lo=None if lo is None else float(lo),
                hi=None if hi is None else float(hi),
            )
        )
    analytics = AnalyticsConfig(
        inline=bool(raw_analytics.get("inline", False)),
        alert_window=_timedelta_ms(
            raw_analytics.get("alert_window_ms"),
            timedelta(seconds=10),
            "analytics.alert_window_ms",
            problems,
        ),
        range_rules=tuple(range_rules),
    )

    raw_desired = doc.get("desired_state")
    if raw_desired is None:
        desired = DesiredState(
            components=frozenset(interim.component_names()),
            retention_days=float(retention_days),
            topics=tuple(STANDARD_TOPICS),
            filter_rules=tuple(
                (r.field_path, r.predicate, tuple(sorted(map(str, r.value))) if isinstance(r.value, frozenset) else r.value)
                for r in filter_rules
            ),
            leg_slos={},
        )
    else:
        if not isinstance(raw_desired, dict):
            problems.append("desired_state: must be a mapping")
            raw_desired = {}
        for topic in raw_desired.get("topics", ()):
            if topic not in STANDARD_TOPICS:
                problems.append(f"desired_state.topics: undefined topic {topic!r}")
        try:
            desired = DesiredState.from_dict(raw_desired)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"desired_state: {exc}")
            desired = DesiredState.from_dict({})

    max_sim = None
    if "max_sim_seconds" in doc:
        value = doc["max_sim_seconds"]
        if not isinstance(value, (int, float)) or value <= 0:
            problems.append("max_sim_seconds: must be a positive number")
        else:
            max_sim = timedelta(seconds=float(value))

    if problems:
        raise ConfigInvalid(problems)

    return ScenarioConfig(
        name=str(name),
        seed=seed,
        start_time=start_time,
        rg_count=rg_count,
        da_count=da_count,
        cnas=tuple(cnas),
        bus=bus,
        latency=latency,
        faults=tuple(faults),
        retention=retention,
        filter_rules=tuple(filter_rules),
        leg_sets=leg_sets,
        desired_state=desired,
        analytics=analytics,
        max_sim=max_sim,
    )
