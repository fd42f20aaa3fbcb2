"""Raw telemetry records, JSONL ingestion and time bucketing.

Three modalities are supported: network flows, web proxy logs and endpoint
agent logs. Every modality is read from JSONL with one record per line and the
field names of the record classes below. Timestamps are integer epoch seconds
on one global clock shared by all modalities.
"""
from __future__ import annotations

import enum
import ipaddress
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, Iterable, Iterator, Mapping, Union
from urllib.parse import urlsplit

from .errors import CorruptInputError, IngestError

log = logging.getLogger(__name__)

DEFAULT_QUANTUM_SECONDS = 300


class Modality(str, enum.Enum):
    NETWORK_FLOW = "network_flow"
    PROXY_LOG = "proxy_log"
    ENDPOINT = "endpoint"

    def __str__(self) -> str:
        return self.value

    @property
    def is_network(self) -> bool:
        return self is not Modality.ENDPOINT


class RecordKind(str, enum.Enum):
    FILE_CREATE = "file_create"
    BINARY_EXECUTE = "binary_execute"
    BINARY_DOWNLOAD = "binary_download"
    FILE_TRANSFER = "file_transfer"
    NETWORK_CONNECTION = "network_connection"
    SCRIPT_EXECUTE = "script_execute"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, slots=True)
class NetworkFlowRecord:
    ts: int
    client_ip: str
    server_ip: str
    bytes: int
    packets: int
    duration: float
    server_name: str | None = None


@dataclass(frozen=True, slots=True)
class ProxyLogRecord:
    ts: int
    client_ip: str
    hostname: str
    url: str
    user_agent: str
    bytes: int
    http_status: int


@dataclass(frozen=True, slots=True)
class EndpointRecord:
    ts: int
    endpoint_id: str
    record_kind: RecordKind
    attributes: Mapping[str, str] = field(default_factory=dict)


TelemetryRecord = Union[NetworkFlowRecord, ProxyLogRecord, EndpointRecord]

RECORD_TYPES = {
    Modality.NETWORK_FLOW: NetworkFlowRecord,
    Modality.PROXY_LOG: ProxyLogRecord,
    Modality.ENDPOINT: EndpointRecord,
}


@dataclass(frozen=True)
class Dataset:
    """Time-ordered records of one modality plus ingestion counters."""

    modality: Modality
    records: tuple = ()
    malformed_count: int = 0
    duplicate_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TelemetryRecord]:
        return iter(self.records)

    @property
    def line_count(self) -> int:
        return len(self.records) + self.malformed_count + self.duplicate_count

    @property
    def span(self) -> tuple[int, int] | None:
        if not self.records:
            return None
        return self.records[0].ts, self.records[-1].ts

    def with_records(self, records: Iterable[TelemetryRecord]) -> "Dataset":
        """Same modality, different records (sorted by ts, input order on ties)."""
        return Dataset(self.modality, tuple(sorted(records, key=_ts_key)))


def _ts_key(record) -> int:
    return record.ts


def bucket(ts: int, quantum_seconds: int = DEFAULT_QUANTUM_SECONDS) -> int:
    """Index of the time bucket containing ``ts``: ``floor(ts / quantum)``."""
    if quantum_seconds <= 0:
        raise ValueError(f"quantum_seconds must be positive, got {quantum_seconds}")
    return ts // quantum_seconds


# --------------------------------------------------------------------------
# validation


class _Malformed(ValueError):
    pass


@lru_cache(maxsize=65536)
def is_ip(value: str) -> bool:
    try:
        ipaddress.ip_address(value)
    except ValueError:
        return False
    return True


def url_host(url: str) -> str | None:
    """Host part of a URL's authority; scheme-less URLs are read as http."""
    parts = urlsplit(url if "://" in url else "http://" + url)
    try:
        return parts.hostname
    except ValueError:
        return None


def _int(obj, name, lo=0, hi=None) -> int:
    value = obj[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise _Malformed(f"{name} must be an integer")
    if value < lo or (hi is not None and value > hi):
        raise _Malformed(f"{name}={value} out of range")
    return value


def _str(obj, name, allow_empty=False) -> str:
    value = obj[name]
    if not isinstance(value, str) or (not allow_empty and not value):
        raise _Malformed(f"{name} must be a non-empty string")
    return value


def _ip(obj, name) -> str:
    value = _str(obj, name)
    if not is_ip(value):
        raise _Malformed(f"{name}={value!r} is not an IP address")
    return value


def _check_fields(obj, required: frozenset, optional: frozenset = frozenset()):
    if not isinstance(obj, dict):
        raise _Malformed("record is not a JSON object")
    keys = obj.keys()
    missing = required - keys
    if missing:
        raise _Malformed(f"missing fields: {sorted(missing)}")
    extra = keys - required - optional
    if extra:
        raise _Malformed(f"unknown fields: {sorted(extra)}")


_FLOW_FIELDS = frozenset({"ts", "client_ip", "server_ip", "bytes", "packets", "duration"})
_PROXY_FIELDS = frozenset(
    {"ts", "client_ip", "hostname", "url", "user_agent", "bytes", "http_status"}
)
_ENDPOINT_FIELDS = frozenset({"ts", "endpoint_id", "record_kind", "attributes"})


def _flow_from_obj(obj) -> NetworkFlowRecord:
    _check_fields(obj, _FLOW_FIELDS, frozenset({"server_name"}))
    packets = _int(obj, "packets")
    nbytes = _int(obj, "bytes")
    if packets == 0 and nbytes != 0:
        raise _Malformed("bytes must be 0 when packets is 0")
    duration = obj["duration"]
    if isinstance(duration, bool) or not isinstance(duration, (int, float)) or duration < 0:
        raise _Malformed("duration must be a non-negative number")
    server_name = obj.get("server_name")
    if server_name is not None and not isinstance(server_name, str):
        raise _Malformed("server_name must be a string")
    return NetworkFlowRecord(
        ts=_int(obj, "ts"),
        client_ip=_ip(obj, "client_ip"),
        server_ip=_ip(obj, "server_ip"),
        bytes=nbytes,
        packets=packets,
        duration=float(duration),
        server_name=server_name or None,
    )


def _proxy_from_obj(obj) -> ProxyLogRecord:
    _check_fields(obj, _PROXY_FIELDS)
    url = _str(obj, "url")
    hostname = _str(obj, "hostname").lower()
    host = url_host(url)
    if host is None or not (host == hostname or host.endswith("." + hostname)):
        raise _Malformed(f"hostname {hostname!r} does not match the url authority")
    return ProxyLogRecord(
        ts=_int(obj, "ts"),
        client_ip=_ip(obj, "client_ip"),
        hostname=hostname,
        url=url,
        user_agent=_str(obj, "user_agent", allow_empty=True),
        bytes=_int(obj, "bytes"),
        http_status=_int(obj, "http_status", 100, 599),
    )


def _endpoint_from_obj(obj) -> EndpointRecord:
    _check_fields(obj, _ENDPOINT_FIELDS)
    try:
        kind = RecordKind(obj["record_kind"])
    except ValueError:
        raise _Malformed(f"unknown record_kind {obj['record_kind']!r}") from None
    attributes = obj["attributes"]
    if not isinstance(attributes, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in attributes.items()
    ):
        raise _Malformed("attributes must map strings to strings")
    if kind is RecordKind.NETWORK_CONNECTION:
        if "local_ip" not in attributes or "remote_port" not in attributes:
            raise _Malformed("network_connection requires local_ip and remote_port")
        if not is_ip(attributes["local_ip"]):
            raise _Malformed("local_ip is not an IP address")
    if "remote_port" in attributes:
        port = attributes["remote_port"]
        if not port.isdigit() or int(port) > 65535:
            raise _Malformed(f"remote_port {port!r} is not in [0, 65535]")
    return EndpointRecord(
        ts=_int(obj, "ts"),
        endpoint_id=_str(obj, "endpoint_id"),
        record_kind=kind,
        attributes=dict(attributes),
    )


_PARSERS = {
    Modality.NETWORK_FLOW: _flow_from_obj,
    Modality.PROXY_LOG: _proxy_from_obj,
    Modality.ENDPOINT: _endpoint_from_obj,
}


def record_from_obj(modality: Modality, obj) -> TelemetryRecord:
    """Validate a decoded JSON object against the modality schema.

    Raises ValueError describing the first violation.
    """
    return _PARSERS[Modality(modality)](obj)


def record_to_obj(record: TelemetryRecord) -> dict:
    if isinstance(record, NetworkFlowRecord):
        obj = {
            "ts": record.ts,
            "client_ip": record.client_ip,
            "server_ip": record.server_ip,
            "bytes": record.bytes,
            "packets": record.packets,
            "duration": round(record.duration, 6),
        }
        if record.server_name is not None:
            obj["server_name"] = record.server_name
        return obj
    if isinstance(record, ProxyLogRecord):
        return {
            "ts": record.ts,
            "client_ip": record.client_ip,
            "hostname": record.hostname,
            "url": record.url,
            "user_agent": record.user_agent,
            "bytes": record.bytes,
            "http_status": record.http_status,
        }
    return {
        "ts": record.ts,
        "endpoint_id": record.endpoint_id,
        "record_kind": record.record_kind.value,
        "attributes": dict(record.attributes),
    }


def dumps_record(record: TelemetryRecord) -> str:
    """Canonical single-line JSON for a record (sorted keys, no whitespace)."""
    return json.dumps(record_to_obj(record), sort_keys=True, separators=(",", ":"))


def modality_of(record: TelemetryRecord) -> Modality:
    if isinstance(record, NetworkFlowRecord):
        return Modality.NETWORK_FLOW
    if isinstance(record, ProxyLogRecord):
        return Modality.PROXY_LOG
    return Modality.ENDPOINT


# --------------------------------------------------------------------------
# ingestion


def _iter_lines(stream) -> Iterator[str]:
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        yield from stream.splitlines()
        return
    for line in stream:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line


def parse_dataset(modality: Modality | str, stream: Union[str, bytes, IO, Iterable]) -> Dataset:
    """Parse a JSONL stream into a sorted, de-duplicated Dataset.

    Blank lines are ignored. Lines that fail to decode or validate are dropped and
    counted in ``malformed_count``; repeated records are dropped and counted in
    ``duplicate_count``.
    """
    modality = Modality(modality)
    parse = _PARSERS[modality]
    seen: set[str] = set()
    records = []
    malformed = duplicates = 0
    try:
        for lineno, line in enumerate(_iter_lines(stream), 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = parse(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                malformed += 1
                log.debug("line %d dropped: %s", lineno, exc)
                continue
            key = dumps_record(record)
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            records.append(record)
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {modality} stream: {exc}") from exc

    total = len(records) + malformed + duplicates
    if malformed and malformed * 2 > total:
        raise CorruptInputError(malformed, total)
    if malformed:
        log.warning("%s: dropped %d malformed of %d lines", modality, malformed, total)
    records.sort(key=_ts_key)
    return Dataset(modality, tuple(records), malformed, duplicates)


def load_dataset(modality: Modality | str, path) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_dataset(modality, fh)
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in dataset.records:
            fh.write(dumps_record(record))
            fh.write("\n")
