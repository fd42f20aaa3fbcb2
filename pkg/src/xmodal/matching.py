"""Entity matching: map IP-keyed network detections onto endpoint IDs.

Evidence for ``(ip, bucket) -> endpoint`` comes from endpoint network
connection records (their ``local_ip``) and, optionally, an inventory feed.
An IP claimed by two or more endpoints within the same bucket is discarded:
detections on it stay unresolved instead of being attributed to a guess.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .framework import (
    DetectionSet,
    EntityKind,
    Event,
    ModalityEntity,
    UnimodalDetection,
    detection_from_obj,
    detection_to_obj,
)
from .jsonio import read_json, read_jsonl, write_json
from .telemetry import DEFAULT_QUANTUM_SECONDS, Dataset, EndpointRecord, Modality, RecordKind, is_ip

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InventoryClaim:
    ip: str
    endpoint_id: str
    ts: int


@dataclass(frozen=True)
class EntityMap:
    quantum_seconds: int
    assoc: Mapping[tuple[str, int], str] = field(default_factory=dict)
    discarded: frozenset = frozenset()

    def resolve(self, ip: str, ts: int) -> str | None:
        return resolve(self, ip, ts)


def build_entity_map(
    endpoint_ds: Dataset,
    quantum_seconds: int = DEFAULT_QUANTUM_SECONDS,
    inventory: Iterable[InventoryClaim] = (),
) -> EntityMap:
    if quantum_seconds <= 0:
        raise ValueError("quantum_seconds must be positive")
    if endpoint_ds.modality is not Modality.ENDPOINT:
        raise ValueError(f"entity map needs endpoint telemetry, got {endpoint_ds.modality.value}")
    claims: dict[tuple[str, int], set[str]] = defaultdict(set)
    for record in endpoint_ds.records:
        if not isinstance(record, EndpointRecord) or record.record_kind is not RecordKind.NETWORK_CONNECTION:
            continue
        ip = record.attributes.get("local_ip")
        if not ip:
            continue
        claims[(ip, record.ts // quantum_seconds)].add(record.endpoint_id)
    for claim in inventory:
        claims[(claim.ip, claim.ts // quantum_seconds)].add(claim.endpoint_id)

    assoc = {}
    discarded = set()
    for key, endpoints in claims.items():
        if len(endpoints) == 1:
            assoc[key] = next(iter(endpoints))
        else:
            discarded.add(key)
    if discarded:
        log.info("entity map: %d ip-buckets discarded as ambiguous", len(discarded))
    return EntityMap(quantum_seconds, assoc, frozenset(discarded))


def resolve(entity_map: EntityMap, ip: str, ts: int) -> str | None:
    """Endpoint ID owning ``ip`` at ``ts``, or None when unknown or ambiguous."""
    return entity_map.assoc.get((ip, ts // entity_map.quantum_seconds))


@dataclass(frozen=True)
class MergedEvent:
    ts: int
    event: Event
    modality: Modality

    def sort_key(self):
        return (self.ts, self.event.event_type, self.modality.value, tuple(sorted(self.event.metadata.items())))


@dataclass(frozen=True)
class MergedDetections:
    """Per cross-modal entity, the time-ordered events from every modality."""

    quantum_seconds: int
    per_entity: Mapping[str, tuple] = field(default_factory=dict)
    unresolved: tuple = ()  # of (Modality, UnimodalDetection)

    @property
    def attributed_count(self) -> int:
        return sum(len(v) for v in self.per_entity.values())

    def events(self) -> Iterable[tuple[str, MergedEvent]]:
        for entity, events in self.per_entity.items():
            for ev in events:
                yield entity, ev

    def restrict(self, keep) -> "MergedDetections":
        """Copy keeping only events for which ``keep(entity, event)`` is true."""
        per_entity = {}
        for entity, events in self.per_entity.items():
            kept = tuple(ev for ev in events if keep(entity, ev))
            if kept:
                per_entity[entity] = kept
        return MergedDetections(self.quantum_seconds, per_entity, ())


def merge(detection_sets: Sequence[DetectionSet], entity_map: EntityMap) -> MergedDetections:
    """Attribute every detection to a cross-modal entity or to ``unresolved``.

    Endpoint-keyed detections pass through unchanged; IP-keyed ones are
    resolved through the entity map at their timestamp.
    """
    per_entity: dict[str, list[MergedEvent]] = defaultdict(list)
    unresolved = []
    for dset in detection_sets:
        for det in dset.detections:
            if det.entity.kind is EntityKind.ENDPOINT:
                endpoint = det.entity.value
            else:
                endpoint = resolve(entity_map, det.entity.value, det.ts)
            if endpoint is None:
                unresolved.append((dset.modality, det))
            else:
                per_entity[endpoint].append(MergedEvent(det.ts, det.event, dset.modality))
    ordered = {
        entity: tuple(sorted(events, key=MergedEvent.sort_key)) for entity, events in sorted(per_entity.items())
    }
    unresolved.sort(key=lambda pair: (pair[1].sort_key(), pair[0].value))
    return MergedDetections(entity_map.quantum_seconds, ordered, tuple(unresolved))


def merged_as_detection_sets(merged: MergedDetections) -> list[DetectionSet]:
    """Attributed events re-expressed as endpoint-keyed detection sets."""
    by_modality: dict[Modality, list] = defaultdict(list)
    for entity, ev in merged.events():
        by_modality[ev.modality].append(UnimodalDetection(ev.ts, ModalityEntity.endpoint(entity), ev.event))
    return [
        DetectionSet(f"merged:{m.value}", m, tuple(sorted(dets, key=UnimodalDetection.sort_key)))
        for m, dets in sorted(by_modality.items(), key=lambda kv: kv[0].value)
    ]


# --------------------------------------------------------------------------
# serialization


def load_inventory(path) -> list[InventoryClaim]:
    claims = []
    for row in read_jsonl(path):
        ip, endpoint, ts = row.get("ip"), row.get("endpoint_id"), row.get("ts")
        if not (isinstance(ip, str) and is_ip(ip) and isinstance(endpoint, str) and endpoint):
            log.warning("inventory row skipped: %r", row)
            continue
        if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
            log.warning("inventory row skipped: %r", row)
            continue
        claims.append(InventoryClaim(ip, endpoint, ts))
    return claims


def entity_map_to_obj(entity_map: EntityMap) -> dict:
    assoc: dict[str, list] = defaultdict(list)
    for (ip, b), endpoint in entity_map.assoc.items():
        assoc[ip].append([b, endpoint])
    discarded: dict[str, list] = defaultdict(list)
    for ip, b in entity_map.discarded:
        discarded[ip].append(b)
    return {
        "quantum_seconds": entity_map.quantum_seconds,
        "assoc": {ip: sorted(v) for ip, v in assoc.items()},
        "discarded": {ip: sorted(v) for ip, v in discarded.items()},
    }


def entity_map_from_obj(obj: Mapping) -> EntityMap:
    assoc = {(ip, int(b)): endpoint for ip, pairs in obj["assoc"].items() for b, endpoint in pairs}
    discarded = frozenset((ip, int(b)) for ip, buckets in obj["discarded"].items() for b in buckets)
    return EntityMap(int(obj["quantum_seconds"]), assoc, discarded)


def _merged_event_obj(ev: MergedEvent) -> dict:
    return {
        "ts": ev.ts,
        "event_type": ev.event.event_type,
        "modality": ev.modality.value,
        "metadata": dict(ev.event.metadata),
    }


def merged_to_obj(merged: MergedDetections) -> dict:
    unresolved = []
    for modality, det in merged.unresolved:
        row = detection_to_obj(det)
        row["modality"] = modality.value
        unresolved.append(row)
    return {
        "quantum_seconds": merged.quantum_seconds,
        "entities": {e: [_merged_event_obj(ev) for ev in evs] for e, evs in merged.per_entity.items()},
        "unresolved": unresolved,
    }


def merged_from_obj(obj: Mapping) -> MergedDetections:
    per_entity = {}
    for entity, rows in sorted(obj["entities"].items()):
        per_entity[entity] = tuple(
            sorted(
                (
                    MergedEvent(
                        int(r["ts"]),
                        Event(r["event_type"], {str(k): str(v) for k, v in r.get("metadata", {}).items()}),
                        Modality(r["modality"]),
                    )
                    for r in rows
                ),
                key=MergedEvent.sort_key,
            )
        )
    unresolved = tuple((Modality(r["modality"]), detection_from_obj(r)) for r in obj.get("unresolved", []))
    return MergedDetections(int(obj["quantum_seconds"]), per_entity, unresolved)


def write_entity_map(path, entity_map: EntityMap) -> None:
    write_json(path, entity_map_to_obj(entity_map))


def read_entity_map(path) -> EntityMap:
    return entity_map_from_obj(read_json(path))


def write_merged(path, merged: MergedDetections) -> None:
    write_json(path, merged_to_obj(merged))


def read_merged(path) -> MergedDetections:
    return merged_from_obj(read_json(path))
