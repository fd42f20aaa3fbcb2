"""Concrete unimodal detectors: signature, anomaly and contextual categories.

The default registry emits the following event types::

    long_url_first_visit          proxy_log   anomaly
    unusual_file_hash             endpoint    anomaly
    unusual_file_type             endpoint    anomaly
    rare_user_agent_for_site      proxy_log   anomaly
    connection_check              proxy_log   signature
    recurring_rare_site           proxy_log   anomaly
    unusual_user_agent_for_user   proxy_log   anomaly
    fingerprinting_tool           endpoint    signature
    unusual_remote_port           endpoint    anomaly
    file_download                 endpoint    contextual
    raw_ip_access                 proxy_log / network_flow   contextual

Rarity detectors compare each record with a frequency baseline built only from
records of earlier baseline periods (days by default), so a record never
counts towards its own baseline.
"""
from __future__ import annotations

import enum
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import partial
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError
from .framework import (
    DetectorDescriptor,
    DetectorRegistry,
    Event,
    ModalityEntity,
    SourceCategory,
    UnimodalDetection,
)
from .telemetry import (
    DEFAULT_QUANTUM_SECONDS,
    Dataset,
    EndpointRecord,
    Modality,
    NetworkFlowRecord,
    ProxyLogRecord,
    RecordKind,
    is_ip,
)

log = logging.getLogger(__name__)

LONG_URL_FIRST_VISIT = "long_url_first_visit"
UNUSUAL_FILE_HASH = "unusual_file_hash"
UNUSUAL_FILE_TYPE = "unusual_file_type"
RARE_UA_FOR_SITE = "rare_user_agent_for_site"
CONNECTION_CHECK = "connection_check"
RECURRING_RARE_SITE = "recurring_rare_site"
UNUSUAL_UA_FOR_USER = "unusual_user_agent_for_user"
FINGERPRINTING_TOOL = "fingerprinting_tool"
UNUSUAL_REMOTE_PORT = "unusual_remote_port"
FILE_DOWNLOAD = "file_download"
RAW_IP_ACCESS = "raw_ip_access"

# The nine behaviours of the OSX/Shlayer lifecycle, with their source modality.
SHLAYER_EVENTS = {
    LONG_URL_FIRST_VISIT: "network",
    UNUSUAL_FILE_HASH: "endpoint",
    UNUSUAL_FILE_TYPE: "endpoint",
    RARE_UA_FOR_SITE: "network",
    CONNECTION_CHECK: "network",
    RECURRING_RARE_SITE: "network",
    UNUSUAL_UA_FOR_USER: "network",
    FINGERPRINTING_TOOL: "endpoint",
    UNUSUAL_REMOTE_PORT: "endpoint",
}

DEFAULT_CONNECTIVITY_HOSTS = (
    "api.ipify.org",
    "checkip.amazonaws.com",
    "icanhazip.com",
    "ifconfig.me",
    "ipinfo.io",
    "connectivitycheck.gstatic.com",
    "detectportal.firefox.com",
    "www.msftconnecttest.com",
)

DEFAULT_FINGERPRINT_SCRIPTS = (
    "system_profiler",
    "ioreg",
    "sw_vers",
    "hostinfo",
    "dmidecode",
    "systeminfo",
    "wmic",
)


class Scope(str, enum.Enum):
    ENVIRONMENT = "environment"
    PER_ENTITY = "per_entity"
    PER_HOSTNAME = "per_hostname"


class KeyKind(str, enum.Enum):
    FILE_HASH = "file_hash"
    FILE_TYPE = "file_type"
    USER_AGENT = "user_agent"
    REMOTE_PORT = "remote_port"


KEY_MODALITY = {
    KeyKind.FILE_HASH: Modality.ENDPOINT,
    KeyKind.FILE_TYPE: Modality.ENDPOINT,
    KeyKind.REMOTE_PORT: Modality.ENDPOINT,
    KeyKind.USER_AGENT: Modality.PROXY_LOG,
}

RARE_KEY_EVENTS = {
    (KeyKind.FILE_HASH, Scope.ENVIRONMENT): UNUSUAL_FILE_HASH,
    (KeyKind.FILE_TYPE, Scope.ENVIRONMENT): UNUSUAL_FILE_TYPE,
    (KeyKind.USER_AGENT, Scope.PER_HOSTNAME): RARE_UA_FOR_SITE,
    (KeyKind.USER_AGENT, Scope.PER_ENTITY): UNUSUAL_UA_FOR_USER,
    (KeyKind.REMOTE_PORT, Scope.ENVIRONMENT): UNUSUAL_REMOTE_PORT,
}


def record_entity(record) -> ModalityEntity:
    if isinstance(record, EndpointRecord):
        return ModalityEntity.endpoint(record.endpoint_id)
    return ModalityEntity.ip(record.client_ip)


def _detection(record, event_type: str, **metadata) -> UnimodalDetection:
    return UnimodalDetection(
        record.ts, record_entity(record), Event(event_type, {k: str(v) for k, v in metadata.items()})
    )


def format_frequency(value: float) -> str:
    return f"{value:.6g}"


# --------------------------------------------------------------------------
# frequency baselines


def check_key_config(modality: Modality, key_kind: KeyKind, scope: Scope) -> None:
    key_kind, scope = KeyKind(key_kind), Scope(scope)
    if KEY_MODALITY[key_kind] is not modality:
        raise ConfigError(f"key {key_kind.value} is not available in {modality.value} records")
    if scope is Scope.PER_HOSTNAME and modality is Modality.ENDPOINT:
        raise ConfigError("per_hostname scope needs proxy or flow records")


def extract_key(record, key_kind: KeyKind) -> str | None:
    if key_kind is KeyKind.USER_AGENT:
        return record.user_agent if isinstance(record, ProxyLogRecord) else None
    if not isinstance(record, EndpointRecord):
        return None
    if key_kind is KeyKind.REMOTE_PORT:
        if record.record_kind is not RecordKind.NETWORK_CONNECTION:
            return None
        return record.attributes.get("remote_port")
    return record.attributes.get(key_kind.value)


def scope_value(record, scope: Scope) -> str | None:
    if scope is Scope.ENVIRONMENT:
        return ""
    if scope is Scope.PER_ENTITY:
        return record.endpoint_id if isinstance(record, EndpointRecord) else record.client_ip
    if isinstance(record, ProxyLogRecord):
        return record.hostname
    if isinstance(record, NetworkFlowRecord):
        return record.server_name
    return None


@dataclass(frozen=True)
class FrequencyBaseline:
    """Key occurrence counts per scope value (``""`` for environment scope).

    For every scope value the total equals the sum of its key counts.
    """

    scope: Scope
    key_kind: KeyKind
    counts: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    totals: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, records: Iterable, scope: Scope, key_kind: KeyKind) -> "FrequencyBaseline":
        builder = _BaselineBuilder(Scope(scope), KeyKind(key_kind))
        builder.add(records)
        return builder.snapshot()

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], key_kind: KeyKind) -> "FrequencyBaseline":
        """Environment-scope baseline from a flat key->count mapping."""
        counts = {str(k): int(v) for k, v in counts.items()}
        return cls(Scope.ENVIRONMENT, KeyKind(key_kind), {"": counts}, {"": sum(counts.values())})

    def lookup(self, scope_value: str, key: str) -> tuple[int, int]:
        profile = self.counts.get(scope_value)
        if profile is None:
            return 0, 0
        return profile.get(key, 0), self.totals[scope_value]

    @property
    def total(self) -> int:
        return sum(self.totals.values())


class _BaselineBuilder:
    def __init__(self, scope: Scope, key_kind: KeyKind):
        self.scope = scope
        self.key_kind = key_kind
        self._counts: dict[str, Counter] = defaultdict(Counter)

    def add(self, records: Iterable) -> None:
        for record in records:
            key = extract_key(record, self.key_kind)
            scope = scope_value(record, self.scope)
            if key is None or scope is None:
                continue
            self._counts[scope][key] += 1

    def snapshot(self) -> FrequencyBaseline:
        counts = {s: MappingProxyType(dict(c)) for s, c in self._counts.items()}
        totals = {s: sum(c.values()) for s, c in counts.items()}
        return FrequencyBaseline(
            self.scope, self.key_kind, MappingProxyType(counts), MappingProxyType(totals)
        )


# --------------------------------------------------------------------------
# anomaly detectors


def detect_long_url_first_visit(
    ds: Dataset, min_url_len: int = 250, history: Iterable[str] = ()
) -> list[UnimodalDetection]:
    """Long URLs on hostnames never seen before in the environment.

    Records are processed in ts order; every visit (long or not) is added to
    the history, so only the first visit of a hostname can fire.
    """
    if min_url_len <= 0:
        raise ConfigError("min_url_len must be positive")
    seen = set(history)
    out = []
    for record in ds.records:
        if not isinstance(record, ProxyLogRecord):
            continue
        if record.hostname in seen:
            continue
        seen.add(record.hostname)
        if len(record.url) >= min_url_len:
            out.append(
                _detection(record, LONG_URL_FIRST_VISIT, hostname=record.hostname, url_length=len(record.url))
            )
    return out


def detect_rare_key(
    ds: Dataset,
    baseline: FrequencyBaseline,
    rarity_threshold: float = 0.01,
    *,
    event_type: str | None = None,
    min_scope_total: int = 0,
) -> list[UnimodalDetection]:
    """Flag records whose key frequency within its scope is below the threshold.

    Keys never seen in the baseline have frequency 0 and are always rare. A
    scope profile with fewer than ``min_scope_total`` observations is treated
    as unknown and produces no detections.
    """
    if not 0 < rarity_threshold < 1:
        raise ConfigError(f"rarity_threshold must be in (0, 1), got {rarity_threshold}")
    check_key_config(ds.modality, baseline.key_kind, baseline.scope)
    if event_type is None:
        try:
            event_type = RARE_KEY_EVENTS[(baseline.key_kind, baseline.scope)]
        except KeyError:
            raise ConfigError(
                f"no event type for {baseline.key_kind.value}/{baseline.scope.value}"
            ) from None
    out = []
    for record in ds.records:
        key = extract_key(record, baseline.key_kind)
        scope = scope_value(record, baseline.scope)
        if key is None or scope is None:
            continue
        count, total = baseline.lookup(scope, key)
        if total < min_scope_total:
            continue
        frequency = count / total if total else 0.0
        if frequency < rarity_threshold:
            meta = {"key": key, "frequency": format_frequency(frequency), "count": count}
            if baseline.scope is not Scope.ENVIRONMENT:
                meta["scope"] = scope
            out.append(_detection(record, event_type, **meta))
    return out


def _periods(ds: Dataset, period_seconds: int) -> Iterator[tuple[int, list]]:
    current, batch = None, []
    for record in ds.records:
        p = record.ts // period_seconds
        if p != current:
            if batch:
                yield current, batch
            current, batch = p, []
        batch.append(record)
    if batch:
        yield current, batch


def detect_rare_key_rolling(
    ds: Dataset,
    *,
    key_kind: KeyKind,
    scope: Scope,
    rarity_threshold: float = 0.01,
    warmup_periods: int = 7,
    min_history_periods: int = 1,
    period_seconds: int = 86400,
    min_scope_total: int = 0,
    event_type: str | None = None,
) -> list[UnimodalDetection]:
    """Rare-key detection against a baseline that grows over the warm-up prefix.

    Period ``p`` (counted from the dataset's first period) is evaluated against
    the records of periods ``[0, min(p, warmup_periods))``. Periods with fewer
    than ``min_history_periods`` of history are not evaluated.
    """
    key_kind, scope = KeyKind(key_kind), Scope(scope)
    check_key_config(ds.modality, key_kind, scope)
    builder = _BaselineBuilder(scope, key_kind)
    first = None
    snapshot = builder.snapshot()
    out = []
    for period, records in _periods(ds, period_seconds):
        if first is None:
            first = period
        age = period - first
        if age >= min_history_periods:
            out.extend(
                detect_rare_key(
                    ds.with_records(records),
                    snapshot,
                    rarity_threshold,
                    event_type=event_type,
                    min_scope_total=min_scope_total,
                )
            )
        if age < warmup_periods:
            builder.add(records)
            snapshot = builder.snapshot()
    return out


def hostname_popularity(ds: Dataset) -> dict[str, int]:
    """Distinct client count per hostname."""
    clients: dict[str, set] = defaultdict(set)
    for record in ds.records:
        if isinstance(record, ProxyLogRecord):
            clients[record.hostname].add(record.client_ip)
    return {host: len(c) for host, c in clients.items()}


def detect_recurring_rare_site(
    ds: Dataset,
    popularity: Mapping[str, int] | None = None,
    max_clients: int = 3,
    min_recurrences: int = 3,
    min_span_buckets: int = 4,
    *,
    quantum_seconds: int = DEFAULT_QUANTUM_SECONDS,
    period_buckets: int | None = None,
) -> list[UnimodalDetection]:
    """Repeated contact of a rarely visited hostname by one client.

    A (client, hostname) pair fires once per period (the whole dataset when
    ``period_buckets`` is None) at the first record where it has been seen in
    ``min_recurrences`` distinct buckets whose first and last are at least
    ``min_span_buckets`` apart.
    """
    if min(max_clients, min_recurrences, min_span_buckets) <= 0:
        raise ConfigError("recurring_rare_site thresholds must be positive")
    if popularity is None:
        popularity = hostname_popularity(ds)
    state: dict[tuple, list] = {}
    fired: set[tuple] = set()
    out = []
    for record in ds.records:
        if not isinstance(record, ProxyLogRecord):
            continue
        clients = popularity.get(record.hostname, 0)
        if clients > max_clients:
            continue
        b = record.ts // quantum_seconds
        period = b // period_buckets if period_buckets else 0
        key = (record.client_ip, record.hostname, period)
        if key in fired:
            continue
        buckets = state.setdefault(key, [])
        if not buckets or buckets[-1] != b:
            buckets.append(b)
        if len(buckets) >= min_recurrences and buckets[-1] - buckets[0] >= min_span_buckets:
            fired.add(key)
            del state[key]
            out.append(
                _detection(
                    record,
                    RECURRING_RARE_SITE,
                    hostname=record.hostname,
                    distinct_clients=clients,
                    buckets=len(buckets),
                )
            )
    return out


# --------------------------------------------------------------------------
# signatures


class MatchKind(str, enum.Enum):
    URL_REGEX = "url_regex"
    HOSTNAME_EXACT = "hostname_exact"
    SCRIPT_NAME_SET = "script_name_set"


@dataclass(frozen=True)
class SignaturePattern:
    name: str
    match_kind: MatchKind
    pattern: str | frozenset
    emitted_event: str

    def __post_init__(self):
        kind = MatchKind(self.match_kind)
        object.__setattr__(self, "match_kind", kind)
        if kind is MatchKind.URL_REGEX:
            try:
                object.__setattr__(self, "_regex", re.compile(self.pattern))
            except (re.error, TypeError) as exc:
                raise ConfigError(f"signature {self.name!r}: bad regex: {exc}") from exc
        else:
            values = {self.pattern} if isinstance(self.pattern, str) else set(self.pattern)
            object.__setattr__(self, "pattern", frozenset(v.lower() for v in values))

    def matches(self, record) -> bool:
        kind = self.match_kind
        if kind is MatchKind.URL_REGEX:
            if isinstance(record, ProxyLogRecord):
                return self._regex.search(record.url) is not None
            return False
        if kind is MatchKind.HOSTNAME_EXACT:
            if isinstance(record, ProxyLogRecord):
                return record.hostname in self.pattern
            if isinstance(record, NetworkFlowRecord) and record.server_name:
                return record.server_name.lower() in self.pattern
            return False
        if isinstance(record, EndpointRecord) and record.record_kind is RecordKind.SCRIPT_EXECUTE:
            name = record.attributes.get("script_name", "")
            return script_basename(name) in self.pattern
        return False


def script_basename(name: str) -> str:
    base = name.strip().split()[0] if name.strip() else ""
    return base.rsplit("/", 1)[-1].lower()


def detect_signature(ds: Dataset, patterns: Sequence[SignaturePattern]) -> list[UnimodalDetection]:
    """One detection per (record, matching pattern)."""
    out = []
    for record in ds.records:
        for pattern in patterns:
            if pattern.matches(record):
                meta = {"signature": pattern.name}
                if isinstance(record, ProxyLogRecord):
                    meta["hostname"] = record.hostname
                elif isinstance(record, EndpointRecord):
                    meta["script_name"] = record.attributes.get("script_name", "")
                out.append(_detection(record, pattern.emitted_event, **meta))
    return out


def connection_check_pattern(hostnames: Iterable[str] = DEFAULT_CONNECTIVITY_HOSTS) -> SignaturePattern:
    return SignaturePattern("connectivity_probe", MatchKind.HOSTNAME_EXACT, frozenset(hostnames), CONNECTION_CHECK)


def fingerprinting_pattern(scripts: Iterable[str] = DEFAULT_FINGERPRINT_SCRIPTS) -> SignaturePattern:
    return SignaturePattern("fingerprinting_scripts", MatchKind.SCRIPT_NAME_SET, frozenset(scripts), FINGERPRINTING_TOOL)


# --------------------------------------------------------------------------
# contextual events


def detect_contextual(ds: Dataset) -> list[UnimodalDetection]:
    """Low-significance context: binary downloads and direct access on raw IPs."""
    out = []
    for record in ds.records:
        if isinstance(record, EndpointRecord):
            if record.record_kind is RecordKind.BINARY_DOWNLOAD:
                out.append(
                    _detection(
                        record,
                        FILE_DOWNLOAD,
                        source_url=record.attributes.get("source_url", ""),
                        file_type=record.attributes.get("file_type", ""),
                    )
                )
        elif isinstance(record, ProxyLogRecord):
            if is_ip(record.hostname):
                out.append(_detection(record, RAW_IP_ACCESS, server=record.hostname))
        elif record.server_name is None or is_ip(record.server_name):
            out.append(_detection(record, RAW_IP_ACCESS, server=record.server_ip))
    return out


# --------------------------------------------------------------------------
# default registry

_RARITY_DEFAULTS = {
    "rarity_threshold": 0.01,
    "warmup_days": 7,
    "min_history_days": 1,
    "min_scope_total": 0,
}

DEFAULT_PARAMS: dict[str, dict] = {
    LONG_URL_FIRST_VISIT: {"min_url_len": 250},
    UNUSUAL_FILE_HASH: dict(_RARITY_DEFAULTS),
    UNUSUAL_FILE_TYPE: dict(_RARITY_DEFAULTS),
    UNUSUAL_REMOTE_PORT: dict(_RARITY_DEFAULTS),
    RARE_UA_FOR_SITE: dict(_RARITY_DEFAULTS, min_scope_total=200),
    UNUSUAL_UA_FOR_USER: dict(_RARITY_DEFAULTS, min_scope_total=20),
    CONNECTION_CHECK: {"hostnames": list(DEFAULT_CONNECTIVITY_HOSTS)},
    FINGERPRINTING_TOOL: {"script_names": list(DEFAULT_FINGERPRINT_SCRIPTS)},
    RECURRING_RARE_SITE: {
        "max_clients": 3,
        "min_recurrences": 3,
        "min_span_buckets": 4,
        "period_buckets": 288,
    },
    FILE_DOWNLOAD: {},
    "raw_ip_access_proxy": {},
    "raw_ip_access_flow": {},
}

_RARE_DETECTORS = {
    UNUSUAL_FILE_HASH: (KeyKind.FILE_HASH, Scope.ENVIRONMENT, Modality.ENDPOINT),
    UNUSUAL_FILE_TYPE: (KeyKind.FILE_TYPE, Scope.ENVIRONMENT, Modality.ENDPOINT),
    UNUSUAL_REMOTE_PORT: (KeyKind.REMOTE_PORT, Scope.ENVIRONMENT, Modality.ENDPOINT),
    RARE_UA_FOR_SITE: (KeyKind.USER_AGENT, Scope.PER_HOSTNAME, Modality.PROXY_LOG),
    UNUSUAL_UA_FOR_USER: (KeyKind.USER_AGENT, Scope.PER_ENTITY, Modality.PROXY_LOG),
}


def resolve_params(overrides: Mapping[str, Mapping] | None = None) -> dict[str, dict]:
    """Merge per-detector overrides into the defaults, rejecting unknown keys."""
    params = {name: dict(values) for name, values in DEFAULT_PARAMS.items()}
    for name, values in (overrides or {}).items():
        if name not in params:
            raise ConfigError(f"unknown detector {name!r} in detector parameters")
        unknown = set(values) - set(params[name])
        if unknown:
            raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
        params[name].update(values)
    return params


def _stringify(params: Mapping) -> dict[str, str]:
    return {
        k: ",".join(map(str, v)) if isinstance(v, (list, tuple, set, frozenset)) else str(v)
        for k, v in sorted(params.items())
    }


def default_registry(
    overrides: Mapping[str, Mapping] | None = None,
    *,
    quantum_seconds: int = DEFAULT_QUANTUM_SECONDS,
    baseline_period_seconds: int = 86400,
    enabled: Iterable[str] | None = None,
) -> DetectorRegistry:
    """Registry with every default detector, parameterised from ``overrides``."""
    params = resolve_params(overrides)
    wanted = set(params) if enabled is None else set(enabled)
    unknown = wanted - set(params)
    if unknown:
        raise ConfigError(f"unknown detectors: {sorted(unknown)}")
    registry = DetectorRegistry()

    def add(name, modality, category, events, fn):
        if name in wanted:
            descriptor = DetectorDescriptor(name, modality, frozenset(events), category, _stringify(params[name]))
            registry.register(descriptor, fn)

    p = params[LONG_URL_FIRST_VISIT]
    add(
        LONG_URL_FIRST_VISIT,
        Modality.PROXY_LOG,
        SourceCategory.ANOMALY,
        [LONG_URL_FIRST_VISIT],
        partial(detect_long_url_first_visit, min_url_len=int(p["min_url_len"])),
    )
    for name, (key_kind, scope, modality) in _RARE_DETECTORS.items():
        p = params[name]
        add(
            name,
            modality,
            SourceCategory.ANOMALY,
            [name],
            partial(
                detect_rare_key_rolling,
                key_kind=key_kind,
                scope=scope,
                rarity_threshold=float(p["rarity_threshold"]),
                warmup_periods=int(p["warmup_days"]),
                min_history_periods=int(p["min_history_days"]),
                period_seconds=baseline_period_seconds,
                min_scope_total=int(p["min_scope_total"]),
                event_type=name,
            ),
        )
    probe = connection_check_pattern(params[CONNECTION_CHECK]["hostnames"])
    add(CONNECTION_CHECK, Modality.PROXY_LOG, SourceCategory.SIGNATURE, [CONNECTION_CHECK],
        partial(detect_signature, patterns=[probe]))
    fingerprint = fingerprinting_pattern(params[FINGERPRINTING_TOOL]["script_names"])
    add(FINGERPRINTING_TOOL, Modality.ENDPOINT, SourceCategory.SIGNATURE, [FINGERPRINTING_TOOL],
        partial(detect_signature, patterns=[fingerprint]))
    p = params[RECURRING_RARE_SITE]
    add(
        RECURRING_RARE_SITE,
        Modality.PROXY_LOG,
        SourceCategory.ANOMALY,
        [RECURRING_RARE_SITE],
        partial(
            detect_recurring_rare_site,
            max_clients=int(p["max_clients"]),
            min_recurrences=int(p["min_recurrences"]),
            min_span_buckets=int(p["min_span_buckets"]),
            quantum_seconds=quantum_seconds,
            period_buckets=int(p["period_buckets"]) if p["period_buckets"] else None,
        ),
    )
    add(FILE_DOWNLOAD, Modality.ENDPOINT, SourceCategory.CONTEXTUAL, [FILE_DOWNLOAD], detect_contextual)
    add("raw_ip_access_proxy", Modality.PROXY_LOG, SourceCategory.CONTEXTUAL, [RAW_IP_ACCESS], detect_contextual)
    add("raw_ip_access_flow", Modality.NETWORK_FLOW, SourceCategory.CONTEXTUAL, [RAW_IP_ACCESS], detect_contextual)
    return registry
