"""Mutable object store and write-once (WORM) store with retention.

The immutable store enforces object lock: no overwrite ever, no delete before
``stored_at + retention``. Both stores share one clock source with the rest
of the pipeline so retention tests can cross the one-year boundary instantly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

from .errors import NotFound, RetentionLocked, StorageUnavailable, WriteOnceViolation

MUTABLE = "mutable"
IMMUTABLE = "immutable"
KINDS = (MUTABLE, IMMUTABLE)


@dataclass(frozen=True)
class RetentionPolicy:
    period: timedelta = timedelta(days=365)

    def __post_init__(self):
        if self.period <= timedelta(0):
            raise ValueError("retention period must be positive")


@dataclass(frozen=True)
class StoredObject:
    key: str
    payload: bytes
    stored_at: datetime
    retention_until: datetime | None
    kind: str


class ObjectStore:
    """Keyed byte store; ``immutable`` kind gets create-only + retention lock.

    Safe for concurrent readers/writers: the immutable put is an atomic
    check-and-create under a single lock.
    """

    def __init__(self, kind: str, retention: RetentionPolicy | None = None):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if kind == IMMUTABLE and retention is None:
            retention = RetentionPolicy()
        self.kind = kind
        self.retention = retention
        self.available = True
        self._objects: dict[str, StoredObject] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._objects)

    def put(self, key: str, payload: bytes, now: datetime) -> StoredObject:
        if not key:
            raise ValueError("key must be non-empty")
        if not self.available:
            raise StorageUnavailable(f"{self.kind} store is down")
        with self._lock:
            if self.kind == IMMUTABLE:
                if key in self._objects:
                    raise WriteOnceViolation(f"immutable key {key!r} already exists")
                retention_until = now + self.retention.period
            else:
                retention_until = None
            obj = StoredObject(
                key=key,
                payload=bytes(payload),
                stored_at=now,
                retention_until=retention_until,
                kind=self.kind,
            )
            self._objects[key] = obj
            return obj

    def get(self, key: str) -> StoredObject:
        try:
            return self._objects[key]
        except KeyError:
            raise NotFound(f"no {self.kind} object under {key!r}") from None

    def contains(self, key: str) -> bool:
        return key in self._objects

    def delete(self, key: str, now: datetime) -> None:
        if not self.available:
            raise StorageUnavailable(f"{self.kind} store is down")
        with self._lock:
            obj = self._objects.get(key)
            if obj is None:
                raise NotFound(f"no {self.kind} object under {key!r}")
            if obj.retention_until is not None and now < obj.retention_until:
                raise RetentionLocked(
                    f"{key!r} locked until {obj.retention_until.isoformat()}"
                )
            del self._objects[key]

    def list_keys(self, prefix: str = "") -> list[str]:
        """Sorted prefix scan; analytics ingests per-CSP slices via ``<csp>/``."""
        return sorted(k for k in self._objects if k.startswith(prefix))

    def objects(self) -> list[StoredObject]:
        return [self._objects[k] for k in self.list_keys()]


@dataclass
class ArchiveStores:
    """The archiver's two destinations plus shared routing."""

    mutable: ObjectStore
    immutable: ObjectStore

    @classmethod
    def create(cls, retention: RetentionPolicy | None = None) -> "ArchiveStores":
        return cls(
            mutable=ObjectStore(MUTABLE),
            immutable=ObjectStore(IMMUTABLE, retention=retention),
        )

    def for_data_type(self, data_type: str) -> ObjectStore:
        return self.mutable if data_type == "metrics" else self.immutable


def save_store_to_dir(store: ObjectStore, root: Path) -> int:
    """Persist one object per file under ``<root>/<kind>/<csp>/<log_id>.json``.

    File contents are the stored payload (the canonical envelope document).
    A ``<kind>.manifest.json`` sidecar records stored_at/retention times.
    """
    root = Path(root)
    kind_dir = root / store.kind
    manifest: dict[str, dict] = {}
    count = 0
    for obj in store.objects():
        rel = Path(obj.key + ".json")
        target = kind_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(obj.payload)
        manifest[obj.key] = {
            "stored_at": obj.stored_at.isoformat(timespec="microseconds"),
            "retention_until": (
                obj.retention_until.isoformat(timespec="microseconds")
                if obj.retention_until
                else None
            ),
        }
        count += 1
    kind_dir.mkdir(parents=True, exist_ok=True)
    (root / f"{store.kind}.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return count


def load_payloads_from_dir(root: Path, kinds: tuple[str, ...] = KINDS) -> list[tuple[str, str, bytes]]:
    """Read back persisted objects as ``(kind, key, payload)`` tuples."""
    root = Path(root)
    out: list[tuple[str, str, bytes]] = []
    for kind in kinds:
        kind_dir = root / kind
        if not kind_dir.is_dir():
            continue
        for path in sorted(kind_dir.rglob("*.json")):
            key = str(path.relative_to(kind_dir))[: -len(".json")]
            out.append((kind, key, path.read_bytes()))
    return out
