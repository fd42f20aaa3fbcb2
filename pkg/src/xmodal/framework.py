"""Unimodal detector contract and the shared event dictionary.

A unimodal detector consumes the Dataset of exactly one modality and returns
``(ts, entity, event)`` triplets. The event dictionary is the union of the
event types declared by every registered detector.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .errors import ConfigError, ContractViolation, RegistrationError
from .jsonio import read_jsonl, write_jsonl
from .telemetry import Dataset, Modality

log = logging.getLogger(__name__)


class SourceCategory(str, enum.Enum):
    SIGNATURE = "signature"
    CLASSIFIER = "classifier"
    ANOMALY = "anomaly"
    CONTEXTUAL = "contextual"


class EntityKind(str, enum.Enum):
    IP = "ip_address"
    ENDPOINT = "endpoint_id"


@dataclass(frozen=True, order=True)
class ModalityEntity:
    kind: EntityKind
    value: str

    @classmethod
    def ip(cls, value: str) -> "ModalityEntity":
        return cls(EntityKind.IP, value)

    @classmethod
    def endpoint(cls, value: str) -> "ModalityEntity":
        return cls(EntityKind.ENDPOINT, value)


@dataclass(frozen=True)
class EventType:
    id: str
    source_category: SourceCategory


@dataclass(frozen=True)
class Event:
    event_type: str
    metadata: Mapping[str, str] = field(default_factory=dict, compare=True, hash=False)

    def __hash__(self):
        return hash((self.event_type, tuple(sorted(self.metadata.items()))))


@dataclass(frozen=True)
class UnimodalDetection:
    ts: int
    entity: ModalityEntity
    event: Event

    def sort_key(self):
        return (
            self.ts,
            self.entity.kind.value,
            self.entity.value,
            self.event.event_type,
            tuple(sorted(self.event.metadata.items())),
        )


@dataclass(frozen=True)
class DetectorDescriptor:
    name: str
    modality: Modality
    emitted_event_types: frozenset
    category: SourceCategory
    parameters: Mapping[str, str] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "category", SourceCategory(self.category))
        object.__setattr__(self, "emitted_event_types", frozenset(self.emitted_event_types))


@dataclass(frozen=True)
class DetectionSet:
    """Output of one detector: its detections in canonical order."""

    detector: str
    modality: Modality
    detections: tuple

    def __len__(self):
        return len(self.detections)


DetectorFn = Callable[[Dataset], Iterable[UnimodalDetection]]

EXPECTED_ENTITY = {
    Modality.NETWORK_FLOW: EntityKind.IP,
    Modality.PROXY_LOG: EntityKind.IP,
    Modality.ENDPOINT: EntityKind.ENDPOINT,
}


class DetectorRegistry:
    """Holds registered detectors and the event dictionary they define."""

    def __init__(self):
        self._detectors: dict[str, tuple[DetectorDescriptor, DetectorFn]] = {}
        self._events: dict[str, EventType] = {}
        self._emitters: dict[str, set[str]] = {}

    def register(self, descriptor: DetectorDescriptor, impl: DetectorFn) -> DetectorDescriptor:
        if descriptor.name in self._detectors:
            raise RegistrationError(f"detector {descriptor.name!r} is already registered")
        if not descriptor.emitted_event_types:
            raise RegistrationError(f"detector {descriptor.name!r} declares no event types")
        for type_id in descriptor.emitted_event_types:
            known = self._events.get(type_id)
            if known is not None and known.source_category is not descriptor.category:
                raise RegistrationError(
                    f"event type {type_id!r} already declared as {known.source_category.value}"
                )
        for type_id in descriptor.emitted_event_types:
            self._events.setdefault(type_id, EventType(type_id, descriptor.category))
            self._emitters.setdefault(type_id, set()).add(descriptor.name)
        self._detectors[descriptor.name] = (descriptor, impl)
        return descriptor

    def __contains__(self, name: str) -> bool:
        return name in self._detectors

    def __len__(self) -> int:
        return len(self._detectors)

    @property
    def descriptors(self) -> list[DetectorDescriptor]:
        return [self._detectors[name][0] for name in sorted(self._detectors)]

    @property
    def event_dictionary(self) -> dict[str, EventType]:
        return dict(sorted(self._events.items()))

    def modalities(self) -> set[Modality]:
        return {d.modality for d, _ in self._detectors.values()}

    def dictionary_json(self) -> list[dict]:
        return [
            {
                "id": et.id,
                "source_category": et.source_category.value,
                "detectors": sorted(self._emitters[et.id]),
            }
            for et in self.event_dictionary.values()
        ]

    def run(self, name: str, dataset: Dataset) -> DetectionSet:
        descriptor, impl = self._detectors[name]
        if dataset.modality is not descriptor.modality:
            raise ConfigError(
                f"detector {name!r} expects {descriptor.modality.value}, got {dataset.modality.value}"
            )
        span = dataset.span
        expected_kind = EXPECTED_ENTITY[descriptor.modality]
        unique = {}
        for det in impl(dataset):
            etype = det.event.event_type
            if etype not in descriptor.emitted_event_types:
                raise ContractViolation(f"detector {name!r} emitted undeclared event type {etype!r}")
            if det.entity.kind is not expected_kind:
                raise ContractViolation(
                    f"detector {name!r} emitted a {det.entity.kind.value} entity on "
                    f"{descriptor.modality.value} data"
                )
            if span is None or not span[0] <= det.ts <= span[1]:
                raise ContractViolation(
                    f"detector {name!r} emitted ts={det.ts} outside the dataset time span"
                )
            unique.setdefault(det.sort_key(), det)
        detections = tuple(unique[k] for k in sorted(unique))
        return DetectionSet(name, descriptor.modality, detections)

    def run_all(self, datasets: Mapping[Modality, Dataset] | Iterable[Dataset]) -> list[DetectionSet]:
        """Run every registered detector on the dataset of its modality.

        Results are ordered by detector name. Any detector failure aborts the run.
        """
        if not isinstance(datasets, Mapping):
            datasets = {ds.modality: ds for ds in datasets}
        datasets = {Modality(k): v for k, v in datasets.items()}
        missing = sorted(m.value for m in self.modalities() - datasets.keys())
        if missing:
            raise ConfigError(f"no dataset for modalities: {', '.join(missing)}")
        out = []
        for descriptor in self.descriptors:
            result = self.run(descriptor.name, datasets[descriptor.modality])
            log.info("%s: %d detections", descriptor.name, len(result))
            out.append(result)
        return out


# --------------------------------------------------------------------------
# events store (detector outputs persisted as JSONL)


def detection_to_obj(det: UnimodalDetection) -> dict:
    return {
        "ts": det.ts,
        "entity": {"kind": det.entity.kind.value, "value": det.entity.value},
        "event_type": det.event.event_type,
        "metadata": dict(det.event.metadata),
    }


def detection_from_obj(obj: Mapping) -> UnimodalDetection:
    entity = obj["entity"]
    return UnimodalDetection(
        int(obj["ts"]),
        ModalityEntity(EntityKind(entity["kind"]), str(entity["value"])),
        Event(str(obj["event_type"]), {str(k): str(v) for k, v in obj.get("metadata", {}).items()}),
    )


def events_store_rows(detection_sets: Iterable[DetectionSet]) -> Iterable[dict]:
    for ds in sorted(detection_sets, key=lambda s: s.detector):
        for det in ds.detections:
            row = detection_to_obj(det)
            row["detector"] = ds.detector
            row["modality"] = ds.modality.value
            yield row


def write_events_store(path, detection_sets: Iterable[DetectionSet]) -> None:
    write_jsonl(path, events_store_rows(detection_sets))


def read_events_store(path) -> list[DetectionSet]:
    grouped: dict[str, tuple[Modality, list]] = {}
    for row in read_jsonl(path):
        entry = grouped.setdefault(row["detector"], (Modality(row["modality"]), []))
        entry[1].append(detection_from_obj(row))
    return [
        DetectionSet(name, modality, tuple(sorted(dets, key=UnimodalDetection.sort_key)))
        for name, (modality, dets) in sorted(grouped.items())
    ]
