"""Scenario runner: wires the topology, injects faults, drives to quiescence.

Simulated-time mode is the default and is fully deterministic: events run in
(timestamp, component id, sequence) order and every random draw comes from a
seeded stream, so equal seeds give byte-identical reports and archives.
Wall-clock mode executes the same schedule paced against real time.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable

from .analytics.assess import Alert, Incident
from .analytics.drift import DesiredState
from .analytics.legs import compute_legs
from .bus import DEFER, STANDARD_TOPICS, FaultTolerantBus
from .cna import CnaConfig, emission_plan, generate_envelope, uuid_stream
from .envelope import (
    STAGE_IMS_GATEWAY,
    format_instant,
    parse_and_validate,
    serialize,
    stamp_stage,
)
from .errors import AllChannelsDown, DuplicateStage, StorageUnavailable, UnrecognizedFormat
from .gateway import RETRYABLE_REASONS, Gateway, GatewayConfig, RetryPolicy
from .pipeline import (
    AggregationWindow,
    BatchAggregator,
    DeadLetterSink,
    apply_filter,
    archive,
    convert,
)
from .scenario import ScenarioConfig, derive_seed
from .sim import EventLoop
from .storage import MUTABLE, ArchiveStores, ObjectStore, save_store_to_dir

DEFAULT_AGG_WINDOW = 10


@dataclass
class EmitterStats:
    csp: str
    path: str
    attempted_metrics: int = 0
    attempted_logs: int = 0
    acked_metrics: int = 0
    acked_logs: int = 0
    failed: int = 0

    def as_dict(self) -> dict:
        return {
            "csp": self.csp,
            "path": self.path,
            "attempted_metrics": self.attempted_metrics,
            "attempted_logs": self.attempted_logs,
            "acked_metrics": self.acked_metrics,
            "acked_logs": self.acked_logs,
            "failed": self.failed,
        }


@dataclass
class RunReport:
    """Everything a run produced, serializable to deterministic JSON."""

    scenario: str
    seed: int
    started_at: str
    finished_at: str
    emitters: list[dict]
    gateways: dict[str, dict]
    pipeline: dict
    store_counts: dict[str, int]
    failover_events: list[dict]
    archived_keys: list[str]
    log_ids: dict[str, list[str]]
    alerts: int
    incidents: int

    def to_json(self) -> bytes:
        return (json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n").encode("utf-8")

    @property
    def emitted_log_ids(self) -> set[str]:
        return set(self.log_ids["emitted"])

    @property
    def archived_log_ids(self) -> set[str]:
        return set(self.log_ids["archived"])


class _Consumer:
    """Availability flag shared by the pipeline consumer tasks."""

    def __init__(self, name: str):
        self.name = name
        self.available = True


class Runner:
    """Builds the topology for one scenario and runs it to quiescence."""

    def __init__(self, cfg: ScenarioConfig, wall: bool = False):
        self.cfg = cfg
        self.loop = EventLoop(cfg.start_time, wall=wall)
        self.latency_rng = random.Random(derive_seed(cfg.seed, "latency"))
        self.dead_letters = DeadLetterSink()
        self.stores = ArchiveStores.create(retention=cfg.retention)
        self.failover_events: list[dict] = []
        self.alerts: list[Alert] = []
        self.incidents: list[Incident] = []

        self.ims_bus = self._make_bus("ims")
        self.rg_buses: dict[int, FaultTolerantBus] = {}

        self.ims_gateway = Gateway(
            GatewayConfig(
                stage_name=STAGE_IMS_GATEWAY,
                bus=self.ims_bus,
                rg_id="RG-GOV-IMS",
                topic="converter",
            ),
            dead_letters=self.dead_letters,
        )
        self.rg_gateways: dict[int, Gateway] = {}
        self.forwarders: dict[int, _Consumer] = {}
        for idx, _cna in cfg.queued_cnas():
            bus = self._make_bus(f"rg{idx}")
            self.rg_buses[idx] = bus
            self.rg_gateways[idx] = Gateway(
                GatewayConfig(
                    stage_name=f"RG_{idx}_API_Gateway_timestamp",
                    bus=bus,
                    rg_id=f"RG-{idx}",
                    topic="ingress",
                ),
                dead_letters=self.dead_letters,
            )
            self.forwarders[idx] = _Consumer(f"rg{idx}-forwarder")

        self.converter = _Consumer("converter")
        self.archiver = _Consumer("archiver")
        self.aggregator = _Consumer("aggregator")
        self.batcher = BatchAggregator(AggregationWindow(DEFAULT_AGG_WINDOW))

        self.emitter_stats: list[EmitterStats] = []
        self.emitted_log_ids: list[str] = []
        self.failed_log_ids: list[str] = []
        self.published_log_ids: list[str] = []  # accepted into the governance bus
        self.converted_count = 0
        self.converter_duplicates = 0
        self.filtered_log_ids: list[str] = []
        self.dead_letter_log_ids: list[str] = []
        self.archived_keys: list[str] = []
        self.archived_ids: set[str] = set()
        self.archive_duplicates = 0
        self.batches_sealed = 0
        self.batches_partial = 0
        self._converter_seen: set[str] = set()
        self._archiver_seen: set[str] = set()
        self._aggregator_seen: set[str] = set()
        self._assess_state: dict[str, list[Alert]] = {}

        self._wire_consumers()

    # -- construction ---------------------------------------------------------

    def _make_bus(self, name: str) -> FaultTolerantBus:
        ids = uuid_stream(derive_seed(self.cfg.seed, f"bus:{name}"))

        def on_transition(at: datetime, old: str, new: str, bus_name=name) -> None:
            self.failover_events.append(
                {"bus": bus_name, "at": format_instant(at), "from": old, "to": new}
            )

        return FaultTolerantBus(
            name,
            self.loop,
            payload_store=ObjectStore(MUTABLE),
            payload_threshold=self.cfg.bus.payload_threshold,
            beat_interval=self.cfg.bus.beat_interval,
            miss_threshold=self.cfg.bus.miss_threshold,
            redelivery_delay=self.cfg.bus.redelivery_delay,
            id_source=lambda: next(ids),
            on_transition=on_transition,
        )

    def _hop(self, name: str) -> Callable[[], timedelta]:
        model = self.cfg.latency[name]
        return lambda: model.sample(self.latency_rng)

    def _wire_consumers(self) -> None:
        for idx in self.rg_buses:
            self._wire_forwarder(idx)
        self.ims_bus.subscribe(
            "converter", "converter", self._converter_handler,
            transit_fn=self._hop("ims_gateway_to_converter"),
        )
        self.ims_bus.subscribe(
            "archiver", "archiver", self._archiver_handler,
            transit_fn=self._hop("converter_to_archiver"),
        )
        self.ims_bus.subscribe(
            "aggregator", "archiver", self._aggregator_handler,
            transit_fn=self._hop("converter_to_archiver"),
        )
        if self.cfg.analytics.inline:
            self.ims_bus.subscribe("correlator", "alerts", self._correlator_handler)
            self.ims_bus.subscribe("incident-log", "incidents", self._incident_handler)

    def _wire_forwarder(self, idx: int) -> None:
        bus = self.rg_buses[idx]
        consumer = self.forwarders[idx]
        stage = f"RG_{idx}_SQS_Forwarder_timestamp"
        remote_hop = self._hop("forwarder_to_ims_gateway")

        def handler(msg, now, done):
            if not consumer.available:
                return False
            env = bus.resolve(msg)
            try:
                stamped = stamp_stage(env, stage, now)
            except DuplicateStage:
                self.dead_letters.add("duplicate-stage", now, serialize(env))
                self.dead_letter_log_ids.append(env.log_id)
                return True
            raw = serialize(stamped)

            def deliver():
                ack = self.ims_gateway.ingest_push(raw, self.loop.now())
                if ack.accepted:
                    self.published_log_ids.append(ack.log_id)
                    done(True)
                elif ack.reason in RETRYABLE_REASONS:
                    done(False)  # redelivered with a fresh forwarder stamp
                else:
                    self.dead_letter_log_ids.append(env.log_id)
                    done(True)  # gateway dead-lettered it; do not loop

            self.loop.schedule(remote_hop(), f"fwd:{idx}:deliver", deliver)
            return DEFER

        bus.subscribe(
            consumer.name, "ingress", handler,
            transit_fn=self._hop("rg_gateway_to_forwarder"),
        )

    # -- consumer handlers -------------------------------------------------------

    def _converter_handler(self, msg, now, done):
        if not self.converter.available:
            return False
        if msg.message_id in self._converter_seen:
            self.converter_duplicates += 1
            return True
        env = self.ims_bus.resolve(msg)
        try:
            converted = convert(env, now)
        except UnrecognizedFormat as exc:
            self.dead_letters.add(str(exc), now, serialize(env))
            self.dead_letter_log_ids.append(env.log_id)
            self._converter_seen.add(msg.message_id)
            return True
        if not apply_filter(self.cfg.filter_rules, converted):
            self.filtered_log_ids.append(converted.log_id)
            self._converter_seen.add(msg.message_id)
            return True
        try:
            self.ims_bus.publish("converter", "archiver", converted)
        except AllChannelsDown:
            return False  # retry after redelivery; not marked seen
        self._converter_seen.add(msg.message_id)
        self.converted_count += 1
        return True

    def _archiver_handler(self, msg, now, done):
        if not self.archiver.available:
            return False
        if msg.message_id in self._archiver_seen:
            return True
        env = self.ims_bus.resolve(msg)
        if env.log_id in self.archived_ids:
            self.archive_duplicates += 1
            self._archiver_seen.add(msg.message_id)
            return True
        try:
            obj = archive(env, self.stores, now)
        except StorageUnavailable:
            return False
        self._archiver_seen.add(msg.message_id)
        self.archived_ids.add(env.log_id)
        self.archived_keys.append(obj.key)
        if self.cfg.analytics.inline:
            self._assess_archived(obj, now)
        return True

    def _aggregator_handler(self, msg, now, done):
        if not self.aggregator.available:
            return False
        if msg.message_id in self._aggregator_seen:
            return True
        self._aggregator_seen.add(msg.message_id)
        batch = self.batcher.add(self.ims_bus.resolve(msg))
        if batch is not None:
            self.batches_sealed += 1
        return True

    # -- inline analytics ----------------------------------------------------------

    def _assess_archived(self, obj, now) -> None:
        env = parse_and_validate(obj.payload)
        legs = self.cfg.leg_sets.get(env.csp, ())
        record = compute_legs(legs, env)
        for rule in self.cfg.analytics.range_rules:
            csp, _, leg_name = rule.target.partition("/")
            if csp != env.csp or leg_name not in record.delays:
                continue
            value = record.delays[leg_name]
            if (rule.lo is not None and value < rule.lo) or (
                rule.hi is not None and value > rule.hi
            ):
                payload = {
                    "rule_id": f"range:{rule.target}",
                    "source": rule.target,
                    "observed": value,
                    "expected": f"expected within [{rule.lo}, {rule.hi}]",
                    "at": format_instant(now),
                }
                try:
                    self.ims_bus.publish_event("da-assessor", "alerts", payload)
                except AllChannelsDown:
                    pass  # alerting is best-effort; the archive already succeeded

    def _correlator_handler(self, msg, now, done):
        payload = msg.body
        alert = Alert(
            rule_id=payload["rule_id"],
            source=payload["source"],
            observed=payload["observed"],
            expected=payload["expected"],
            at=now,
        )
        self.alerts.append(alert)
        window = self.cfg.analytics.alert_window
        group = self._assess_state.get(alert.source)
        if group is not None and alert.at - group[-1].at <= window:
            group.append(alert)
        else:
            if group is not None:
                self._publish_incident(group)
            self._assess_state[alert.source] = [alert]
        return True

    def _publish_incident(self, group: list[Alert]) -> None:
        payload = {
            "count": len(group),
            "sources": sorted({a.source for a in group}),
            "window_start": format_instant(group[0].at),
            "window_end": format_instant(group[-1].at),
            "rule_id": group[0].rule_id,
        }
        try:
            self.ims_bus.publish_event("da-correlator", "incidents", payload)
        except AllChannelsDown:
            pass

    def _incident_handler(self, msg, now, done):
        p = msg.body
        self.incidents.append(
            Incident(
                count=p["count"],
                sources=frozenset(p["sources"]),
                window_start=datetime.fromisoformat(p["window_start"]),
                window_end=datetime.fromisoformat(p["window_end"]),
                representative=Alert(
                    rule_id=p["rule_id"],
                    source=p["sources"][0],
                    observed=None,
                    expected="",
                    at=datetime.fromisoformat(p["window_start"]),
                ),
            )
        )
        return True

    # -- emitters -------------------------------------------------------------------

    def _entry_ingest(self, cna_index: int, cna: CnaConfig) -> tuple[Gateway, str]:
        if cna.path == "queued":
            return self.rg_gateways[cna_index + 1], "cna_to_rg_gateway"
        return self.ims_gateway, "cna_to_ims_gateway"

    def _schedule_emitter(self, cna_index: int, cna: CnaConfig) -> None:
        stats = EmitterStats(csp=cna.csp, path=cna.path)
        self.emitter_stats.append(stats)
        ids = uuid_stream(cna.seed)
        plan = emission_plan(cna)
        if not plan:
            return
        gateway, entry_hop = self._entry_ingest(cna_index, cna)
        retry = RetryPolicy()
        component = f"cna:{cna_index}:{cna.csp}"
        hop = self._hop(entry_hop)
        direct = cna.path == "direct"

        def emit(j: int) -> None:
            kind = plan[j]
            env = generate_envelope(cna, kind, self.loop.now(), log_id=next(ids))
            if kind == "metrics":
                stats.attempted_metrics += 1
            else:
                stats.attempted_logs += 1
            self.emitted_log_ids.append(env.log_id)
            raw = serialize(env)
            backoffs = retry.backoffs()

            def attempt(attempt_index: int) -> None:
                ack = gateway.ingest_push(raw, self.loop.now())
                if ack.accepted:
                    if direct:
                        self.published_log_ids.append(ack.log_id)
                    if kind == "metrics":
                        stats.acked_metrics += 1
                    else:
                        stats.acked_logs += 1
                    return
                if ack.reason in RETRYABLE_REASONS and attempt_index < len(backoffs):
                    self.loop.schedule(
                        backoffs[attempt_index],
                        component,
                        lambda: attempt(attempt_index + 1),
                    )
                    return
                stats.failed += 1
                self.failed_log_ids.append(env.log_id)

            self.loop.schedule(hop(), component, lambda: attempt(0))
            if j + 1 < len(plan):
                self.loop.schedule(cna.cadence, component, lambda: emit(j + 1))

        self.loop.schedule(timedelta(0), component, lambda: emit(0))

    # -- fault schedule ----------------------------------------------------------------

    def _fault_targets(self) -> dict[str, Callable[[bool], None]]:
        targets: dict[str, Callable[[bool], None]] = {
            "ims-gateway": lambda up: setattr(self.ims_gateway, "available", up),
            "ims-bus-primary": lambda up: self.ims_bus.primary.set_up(up),
            "ims-bus-auxiliary": lambda up: self.ims_bus.auxiliary.set_up(up),
            "converter": lambda up: setattr(self.converter, "available", up),
            "archiver": lambda up: setattr(self.archiver, "available", up),
            "aggregator": lambda up: setattr(self.aggregator, "available", up),
            "mutable-store": lambda up: setattr(self.stores.mutable, "available", up),
            "immutable-store": lambda up: setattr(self.stores.immutable, "available", up),
        }
        for idx, bus in self.rg_buses.items():
            targets[f"rg{idx}-gateway"] = (
                lambda up, gw=self.rg_gateways[idx]: setattr(gw, "available", up)
            )
            targets[f"rg{idx}-forwarder"] = (
                lambda up, fw=self.forwarders[idx]: setattr(fw, "available", up)
            )
            targets[f"rg{idx}-bus-primary"] = lambda up, b=bus: b.primary.set_up(up)
            targets[f"rg{idx}-bus-auxiliary"] = lambda up, b=bus: b.auxiliary.set_up(up)
        return targets

    def _schedule_faults(self) -> None:
        targets = self._fault_targets()
        for i, fw in enumerate(self.cfg.faults):
            toggle = targets[fw.component]
            self.loop.schedule(
                fw.down_at, f"fault:{i}:down", lambda t=toggle: t(False), background=True
            )
            if fw.up_at is not None:
                self.loop.schedule(
                    fw.up_at, f"fault:{i}:up", lambda t=toggle: t(True), background=True
                )

    # -- run ----------------------------------------------------------------------------

    def _budget(self) -> timedelta:
        spans = [
            (len(emission_plan(c)) - 1) * c.cadence
            for c in self.cfg.cnas
            if c.metrics_count + c.logs_count
        ]
        budget = max(spans, default=timedelta(0))
        for fw in self.cfg.faults:
            if fw.up_at is not None:
                budget = max(budget, fw.up_at)
        return budget + timedelta(hours=1)

    def run(self) -> RunReport:
        for bus in [self.ims_bus, *self.rg_buses.values()]:
            bus.start_heartbeats()
        self._schedule_faults()
        for i, cna in enumerate(self.cfg.cnas):
            self._schedule_emitter(i, cna)
        budget = self.cfg.max_sim or self._budget()
        self.loop.run(budget=budget)
        if self.cfg.analytics.inline:
            for source in sorted(self._assess_state):
                self._publish_incident(self._assess_state[source])
            self._assess_state.clear()
            self.loop.run(budget=budget)
        self.batches_partial = len(self.batcher.flush())
        return self._report()

    def _report(self) -> RunReport:
        gateways = {"ims-gateway": self._gateway_stats(self.ims_gateway)}
        for idx, gw in self.rg_gateways.items():
            gateways[f"rg{idx}-gateway"] = self._gateway_stats(gw)
        return RunReport(
            scenario=self.cfg.name,
            seed=self.cfg.seed,
            started_at=format_instant(self.cfg.start_time),
            finished_at=format_instant(self.loop.now()),
            emitters=[s.as_dict() for s in self.emitter_stats],
            gateways=gateways,
            pipeline={
                "converted": self.converted_count,
                "converter_duplicates": self.converter_duplicates,
                "filtered_out": len(self.filtered_log_ids),
                "dead_letters": len(self.dead_letters),
                "archived": len(self.archived_keys),
                "archive_duplicates": self.archive_duplicates,
                "batches_sealed": self.batches_sealed,
                "batches_partial": self.batches_partial,
            },
            store_counts={
                "mutable": len(self.stores.mutable),
                "immutable": len(self.stores.immutable),
            },
            failover_events=list(self.failover_events),
            archived_keys=sorted(self.archived_keys),
            log_ids={
                "emitted": sorted(self.emitted_log_ids),
                "published": sorted(set(self.published_log_ids)),
                "archived": sorted(self.archived_ids),
                "filtered": sorted(self.filtered_log_ids),
                "dead_lettered": sorted(self.dead_letter_log_ids),
                "failed_emissions": sorted(self.failed_log_ids),
            },
            alerts=len(self.alerts),
            incidents=len(self.incidents),
        )

    @staticmethod
    def _gateway_stats(gw: Gateway) -> dict:
        return {
            "received": gw.received,
            "published": gw.published,
            "rejected": gw.rejected,
            "bus_failures": gw.bus_failures,
        }

    # -- post-run accessors ----------------------------------------------------------

    def observed_state(self) -> DesiredState:
        """Snapshot of the wired topology for the drift detector."""
        slos = {
            rule.target: (
                rule.lo if rule.lo is not None else 0.0,
                rule.hi if rule.hi is not None else float("inf"),
            )
            for rule in self.cfg.analytics.range_rules
        }
        return DesiredState(
            components=frozenset(self.cfg.component_names()),
            retention_days=self.cfg.retention.period.total_seconds() / 86400.0,
            topics=tuple(STANDARD_TOPICS),
            filter_rules=tuple(
                (
                    r.field_path,
                    r.predicate,
                    tuple(sorted(map(str, r.value))) if isinstance(r.value, frozenset) else r.value,
                )
                for r in self.cfg.filter_rules
            ),
            leg_slos=slos,
        )

    def save_outputs(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_store_to_dir(self.stores.mutable, out)
        save_store_to_dir(self.stores.immutable, out)
        (out / "dead_letters.jsonl").write_bytes(self.dead_letters.to_jsonl())
        (out / "observed_snapshot.json").write_text(
            json.dumps(self.observed_state().to_dict(), indent=2) + "\n", encoding="utf-8"
        )


def run_scenario(cfg: ScenarioConfig, clock: str = "sim") -> RunReport:
    """Execute a scenario end to end; ``clock`` is ``sim`` or ``wall``."""
    if clock not in ("sim", "wall"):
        raise ValueError("clock must be 'sim' or 'wall'")
    return Runner(cfg, wall=(clock == "wall")).run()
