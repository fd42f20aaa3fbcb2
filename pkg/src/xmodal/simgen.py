"""Synthetic corporate telemetry with scripted attack scenarios.

Every simulated endpoint produces benign background in all three modalities.
Each proxy request and flow has a companion endpoint ``network_connection``
record in the same second, which is what lets entity matching map client IPs
to endpoint IDs.

Scenarios:

``shlayer_dropper``
    Fake flash update fetched from a long first-visit URL as a 7z archive,
    payload execution, ``curl`` fetch of the real update page, then a daily
    routine: connectivity probe, fingerprinting scripts, hourly beacons to a
    rare C2 host with a data-carrying user agent, and an odd remote port.
``generic_trojan``
    Payload download, then a daily raw-IP C2 (proxy and flows), an odd remote
    port and a freshly rewritten payload binary.
``benign_lookalike``
    Benign hosts that reproduce one modality's half of the malware routine
    every day: ``side=endpoint`` (build machines running inventory scripts and
    fresh binaries over unusual ports) or ``side=network`` (automation hosts
    polling private services through rotating tool user agents).

Background noise also contains each Shlayer constituent behaviour as rare,
isolated events (``noise_rate`` per entity and day).
"""
from __future__ import annotations

import base64
import hashlib
import itertools
import math
import os
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .jsonio import read_json, write_json
from .mining import BENIGN, LabelFeed, write_labels
from .telemetry import (
    Dataset,
    EndpointRecord,
    Modality,
    NetworkFlowRecord,
    ProxyLogRecord,
    RecordKind,
    dumps_record,
)

DAY = 86400
DEFAULT_START_TS = 1_700_006_400  # midnight UTC, so windows align with days

SCENARIOS = ("shlayer_dropper", "generic_trojan", "benign_lookalike")
SCENARIO_LABELS = {"shlayer_dropper": "dropper_shlayer", "generic_trojan": "trojan", "benign_lookalike": BENIGN}

BROWSER_UAS = (
    ("Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/16.1 Safari/605.1.15", 0.5),
    ("Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/119.0 Safari/537.36", 0.3),
    ("Mozilla/5.0 (Macintosh; Intel Mac OS X 10.15; rv:120.0) Gecko/20100101 Firefox/120.0", 0.2),
)
CURL_UA = "curl/7.64.1"
POPULAR_HOSTS = (
    "www.google.com",
    "outlook.office365.com",
    "get.adobe.com",
    "www.apple.com",
    "slack.com",
    "github.com",
    "www.youtube.com",
    "login.microsoftonline.com",
    "www.wikipedia.org",
    "zoom.us",
)
FLASH_UPDATE_HOST = "get.adobe.com"
EXEC_TYPES = ("macho",)
CREATE_TYPES = ("docx", "xlsx", "pdf", "png", "txt")
DOWNLOAD_TYPES = (("dmg", 0.4), ("pkg", 0.3), ("zip", 0.3))
BENIGN_SCRIPTS = ("/usr/local/bin/brew", "/usr/bin/git", "/usr/bin/python3", "/Users/shared/backup.sh", "/usr/bin/rsync")
FLOW_PORTS = (("443", 0.7), ("80", 0.15), ("993", 0.15))


@dataclass
class BenignProfile:
    proxy_per_day: float = 20.0
    flows_per_day: float = 6.0
    executes_per_day: float = 2.0
    file_creates_per_day: float = 2.0
    download_prob: float = 0.3
    script_prob: float = 0.3
    n_hostnames: int = 1500
    zipf_exponent: float = 1.1
    long_url_share: float = 0.05
    noise_rate: float = 0.001
    raw_ip_rate: float = 0.005
    work_start_hour: int = 8
    work_hours: int = 10
    n_exec_hashes: int = 30
    n_download_hashes: int = 6


@dataclass
class ScenarioSpec:
    scenario_id: str
    target_entities: tuple
    start_ts: int
    label: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_entities = tuple(self.target_entities)
        if self.label is None:
            self.label = SCENARIO_LABELS.get(self.scenario_id, BENIGN)


@dataclass
class SimConfig:
    n_entities: int = 500
    days: int = 14
    seed: int = 7
    start_ts: int = DEFAULT_START_TS
    benign_profile: BenignProfile = field(default_factory=BenignProfile)
    scenarios: list = field(default_factory=list)
    ip_conflict_fraction: float = 0.02
    unmanaged_clients: int = 10

    @property
    def end_ts(self) -> int:
        return self.start_ts + self.days * DAY

    def entity_ids(self) -> list[str]:
        return [entity_id(i) for i in range(self.n_entities)]

    def validate(self) -> None:
        problems = []
        if self.n_entities < 1:
            problems.append("n_entities must be >= 1")
        if self.days < 1:
            problems.append("days must be >= 1")
        if self.start_ts < 0:
            problems.append("start_ts must be non-negative")
        if not 0 <= self.ip_conflict_fraction <= 1:
            problems.append("ip_conflict_fraction must be in [0, 1]")
        if self.unmanaged_clients < 0:
            problems.append("unmanaged_clients must be >= 0")
        for name, value in asdict(self.benign_profile).items():
            if value < 0:
                problems.append(f"benign_profile.{name} must be >= 0")
        if self.benign_profile.n_hostnames < len(POPULAR_HOSTS):
            problems.append(f"benign_profile.n_hostnames must be >= {len(POPULAR_HOSTS)}")
        known = set(self.entity_ids())
        for i, sc in enumerate(self.scenarios):
            if sc.scenario_id not in SCENARIOS:
                problems.append(f"scenario {i}: unknown scenario_id {sc.scenario_id!r}")
            missing = [e for e in sc.target_entities if e not in known]
            if missing:
                problems.append(f"scenario {i}: unknown target entities {missing}")
            if not self.start_ts <= sc.start_ts < self.end_ts:
                problems.append(f"scenario {i}: start_ts outside the simulated span")
            if sc.scenario_id == "benign_lookalike" and sc.params.get("side") not in ("endpoint", "network"):
                problems.append(f"scenario {i}: benign_lookalike needs params.side endpoint|network")
        targeted: dict[str, str] = {}
        for sc in self.scenarios:
            for e in sc.target_entities:
                if targeted.setdefault(e, sc.label) != sc.label:
                    problems.append(f"entity {e} is targeted with two different labels")
        if problems:
            raise ValidationError(problems)

    def to_obj(self) -> dict:
        obj = asdict(self)
        obj["scenarios"] = [
            {**asdict(sc), "target_entities": list(sc.target_entities)} for sc in self.scenarios
        ]
        return obj

    @classmethod
    def from_obj(cls, obj: Mapping) -> "SimConfig":
        obj = dict(obj)
        try:
            profile = BenignProfile(**obj.pop("benign_profile", {}))
            scenarios = [ScenarioSpec(**sc) for sc in obj.pop("scenarios", [])]
            config = cls(benign_profile=profile, scenarios=scenarios, **obj)
        except TypeError as exc:
            raise ValidationError([str(exc)]) from exc
        return config


def entity_id(index: int) -> str:
    return f"EP{index:04d}"


def local_ip(index: int) -> str:
    return f"10.20.{index // 200}.{index % 200 + 10}"


def default_config(
    n_entities: int = 500,
    days: int = 14,
    seed: int = 7,
    n_shlayer: int = 10,
    n_trojan: int = 6,
    n_lookalike: int = 30,
) -> SimConfig:
    """Desk-scale default: infections on days 1-5, lookalikes active throughout."""
    cfg = SimConfig(n_entities=n_entities, days=days, seed=seed)
    needed = n_shlayer + n_trojan + 2 * n_lookalike
    if needed > n_entities:
        raise ValidationError([f"{needed} scenario targets do not fit in {n_entities} entities"])
    stride = max(1, n_entities // needed)
    pool = (entity_id(i) for i in itertools.count(3, stride))
    infection_days = max(1, min(5, days - 1))
    for i in range(n_shlayer):
        day = 1 + i % infection_days if days > 1 else 0
        start = cfg.start_ts + day * DAY + 9 * 3600 + (i * 1373) % 7200
        cfg.scenarios.append(ScenarioSpec("shlayer_dropper", (next(pool),), start))
    for i in range(n_trojan):
        day = 1 + (i + 2) % infection_days if days > 1 else 0
        start = cfg.start_ts + day * DAY + 10 * 3600 + (i * 2411) % 7200
        cfg.scenarios.append(ScenarioSpec("generic_trojan", (next(pool),), start))
    for side in ("endpoint", "network"):
        targets = tuple(next(pool) for _ in range(n_lookalike))
        if targets:
            cfg.scenarios.append(ScenarioSpec("benign_lookalike", targets, cfg.start_ts, params={"side": side}))
    return cfg


def load_sim_config(path) -> SimConfig:
    return SimConfig.from_obj(read_json(path))


def write_sim_config(path, config: SimConfig) -> None:
    write_json(path, config.to_obj())


# --------------------------------------------------------------------------
# helpers


def _rng(*parts) -> random.Random:
    return random.Random(":".join(map(str, parts)))


def _hex(rng: random.Random, n: int) -> str:
    return "".join(rng.choice("0123456789abcdef") for _ in range(n))


def _count(rng: random.Random, rate: float) -> int:
    if rate <= 0:
        return 0
    return max(0, int(round(rng.gauss(rate, math.sqrt(rate)))))


def host_ip(hostname: str) -> str:
    digest = hashlib.md5(hostname.encode()).digest()
    return f"{23 + digest[0] % 180}.{digest[1]}.{digest[2]}.{1 + digest[3] % 250}"


def _weighted(options):
    values = [v for v, _ in options]
    cum = list(itertools.accumulate(w for _, w in options))
    return values, cum


class _Emitter:
    """Collects records for one entity (or unmanaged client)."""

    def __init__(self, endpoint: str | None, ip: str, out: dict):
        self.endpoint = endpoint
        self.ip = ip
        self.out = out

    def _conn(self, ts, remote_ip, port):
        if self.endpoint is None:
            return
        self.out[Modality.ENDPOINT].append(
            EndpointRecord(
                ts,
                self.endpoint,
                RecordKind.NETWORK_CONNECTION,
                {"local_ip": self.ip, "remote_ip": remote_ip, "remote_port": str(port)},
            )
        )

    def proxy(self, ts, hostname, url, ua, nbytes=2048, status=200):
        self.out[Modality.PROXY_LOG].append(ProxyLogRecord(ts, self.ip, hostname, url, ua, nbytes, status))
        self._conn(ts, host_ip(hostname) if not _looks_ip(hostname) else hostname, 443 if url.startswith("https") else 80)

    def flow(self, ts, server_ip, server_name, port, nbytes, packets, duration):
        self.out[Modality.NETWORK_FLOW].append(
            NetworkFlowRecord(ts, self.ip, server_ip, nbytes, packets, duration, server_name)
        )
        self._conn(ts, server_ip, port)

    def connection(self, ts, remote_ip, port):
        self._conn(ts, remote_ip, port)

    def endpoint_record(self, ts, kind, **attributes):
        self.out[Modality.ENDPOINT].append(EndpointRecord(ts, self.endpoint, kind, attributes))


def _looks_ip(host: str) -> bool:
    return host.replace(".", "").isdigit()


def _path(rng: random.Random, lo: int, hi: int) -> str:
    n = rng.randint(lo, hi)
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789-_/"
    return "".join(rng.choice(alphabet) for _ in range(n))


def _long_query(rng: random.Random, length: int = 320) -> str:
    return "?" + "&".join(f"{_hex(rng, 4)}={_hex(rng, 24)}" for _ in range(length // 30))


class _World:
    """Environment-wide catalogs derived from the seed."""

    def __init__(self, config: SimConfig):
        p = config.benign_profile
        rng = _rng(config.seed, "world")
        tail = [f"www.{_hex(rng, 6)}-{i}.{rng.choice(['com', 'net', 'org', 'io'])}" for i in range(p.n_hostnames - len(POPULAR_HOSTS))]
        self.hosts = list(POPULAR_HOSTS) + tail
        weights = [1.0 / (r + 1) ** p.zipf_exponent for r in range(len(self.hosts))]
        self.host_cum = list(itertools.accumulate(weights))
        self.exec_hashes = [hashlib.sha256(f"exec{i}:{config.seed}".encode()).hexdigest() for i in range(max(1, p.n_exec_hashes))]
        self.download_hashes = [hashlib.sha256(f"dl{i}:{config.seed}".encode()).hexdigest() for i in range(max(1, p.n_download_hashes))]
        self.ua_values, self.ua_cum = _weighted(BROWSER_UAS)
        self.dl_types, self.dl_cum = _weighted(DOWNLOAD_TYPES)
        self.port_values, self.port_cum = _weighted(FLOW_PORTS)

    def host(self, rng):
        return rng.choices(self.hosts, cum_weights=self.host_cum)[0]


# --------------------------------------------------------------------------
# benign background


def _work_ts(rng, day_start, p: BenignProfile) -> int:
    return day_start + p.work_start_hour * 3600 + rng.randrange(max(1, p.work_hours * 3600))


def _benign_day(em: _Emitter, rng: random.Random, world: _World, day_start: int, ua: str, p: BenignProfile):
    for _ in range(_count(rng, p.proxy_per_day)):
        ts = _work_ts(rng, day_start, p)
        host = world.host(rng)
        rank = world.hosts.index(host) if host in POPULAR_HOSTS else len(POPULAR_HOSTS)
        path = "/" + _path(rng, 5, 110)
        if rank < len(POPULAR_HOSTS) and rng.random() < p.long_url_share:
            path += _long_query(rng)
        em.proxy(ts, host, f"https://{host}{path}", ua, rng.randint(300, 90000), 200 if rng.random() < 0.95 else 304)
    for _ in range(_count(rng, p.flows_per_day)):
        ts = _work_ts(rng, day_start, p)
        host = world.host(rng)
        port = rng.choices(world.port_values, cum_weights=world.port_cum)[0]
        packets = rng.randint(2, 400)
        em.flow(ts, host_ip(host), host, port, packets * rng.randint(60, 1400), packets, round(rng.uniform(0.05, 30.0), 3))
    if em.endpoint is None:
        return
    if rng.random() < p.raw_ip_rate:
        ts = _work_ts(rng, day_start, p)
        ip = f"{rng.randint(30, 200)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(1, 250)}"
        em.flow(ts, ip, None, "443", 4000, 20, 1.5)
    for _ in range(_count(rng, p.executes_per_day)):
        em.endpoint_record(
            _work_ts(rng, day_start, p), RecordKind.BINARY_EXECUTE,
            file_hash=rng.choice(world.exec_hashes), file_type="macho",
        )
    for _ in range(_count(rng, p.file_creates_per_day)):
        ftype = rng.choice(CREATE_TYPES)
        em.endpoint_record(
            _work_ts(rng, day_start, p), RecordKind.FILE_CREATE,
            file_type=ftype, path=f"/Users/me/Documents/{_hex(rng, 8)}.{ftype}",
        )
    if rng.random() < p.download_prob:
        ts = _work_ts(rng, day_start, p)
        host = POPULAR_HOSTS[rng.randrange(len(POPULAR_HOSTS))]
        ftype = rng.choices(world.dl_types, cum_weights=world.dl_cum)[0]
        url = f"https://{host}/downloads/{_hex(rng, 10)}.{ftype}"
        em.proxy(ts, host, url, ua, rng.randint(10**6, 10**8))
        em.endpoint_record(
            ts + 5, RecordKind.BINARY_DOWNLOAD,
            file_hash=rng.choice(world.download_hashes), file_type=ftype, source_url=url,
        )
    if rng.random() < p.script_prob:
        em.endpoint_record(_work_ts(rng, day_start, p), RecordKind.SCRIPT_EXECUTE, script_name=rng.choice(BENIGN_SCRIPTS))


def _noise_day(em: _Emitter, rng: random.Random, world: _World, day_start: int, ua: str, p: BenignProfile):
    """Isolated single occurrences of the Shlayer constituent behaviours."""
    rate = p.noise_rate
    if rng.random() < rate:
        host = f"{_hex(rng, 10)}.example.net"
        em.proxy(_work_ts(rng, day_start, p), host, f"https://{host}/r{_long_query(rng)}", ua)
    if rng.random() < rate:
        em.endpoint_record(_work_ts(rng, day_start, p), RecordKind.BINARY_EXECUTE,
                           file_hash=hashlib.sha256(_hex(rng, 16).encode()).hexdigest(), file_type="macho")
    if rng.random() < rate:
        url = f"https://{POPULAR_HOSTS[0]}/files/{_hex(rng, 8)}.rar"
        em.endpoint_record(_work_ts(rng, day_start, p), RecordKind.BINARY_DOWNLOAD,
                           file_hash=rng.choice(world.download_hashes), file_type="rar", source_url=url)
    if rng.random() < rate:
        host = POPULAR_HOSTS[rng.randrange(3)]
        em.proxy(_work_ts(rng, day_start, p), host, f"https://{host}/{_path(rng, 5, 40)}", "Wget/1.21.2")
    if rng.random() < rate:
        host = world.hosts[-1 - rng.randrange(200)]
        em.proxy(_work_ts(rng, day_start, p), host, f"https://{host}/{_path(rng, 5, 40)}", f"App/{rng.randint(1, 9)}.{rng.randint(0, 99)}")
    if rng.random() < rate:
        em.proxy(_work_ts(rng, day_start, p), "checkip.amazonaws.com", "https://checkip.amazonaws.com/", ua)
    if rng.random() < rate:
        host = f"{_hex(rng, 8)}.example.org"
        ts = _work_ts(rng, day_start, p)
        for k in range(3):
            em.proxy(ts + k * 1800, host, f"https://{host}/{_path(rng, 5, 30)}", ua)
    if em.endpoint is None:
        return
    if rng.random() < rate:
        em.endpoint_record(_work_ts(rng, day_start, p), RecordKind.SCRIPT_EXECUTE, script_name="/usr/bin/sw_vers")
    if rng.random() < rate:
        em.connection(_work_ts(rng, day_start, p), host_ip(world.host(rng)), rng.randint(10000, 65000))


# --------------------------------------------------------------------------
# scenarios


def _days(start_ts: int, end_ts: int):
    day_start = start_ts - start_ts % DAY
    while day_start < end_ts:
        yield day_start
        day_start += DAY


def emit_shlayer(em: _Emitter, start_ts: int, rng: random.Random, end_ts: int | None = None) -> None:
    """OSX/Shlayer infection at ``start_ts`` with daily activity until ``end_ts``."""
    end_ts = start_ts + DAY - start_ts % DAY if end_ts is None else end_ts
    lure = f"flashplayer-update-{_hex(rng, 6)}.com"
    lure_url = f"http://{lure}/download/FlashPlayer.dmg{_long_query(rng, 360)}"
    t = start_ts
    em.proxy(t, lure, lure_url, BROWSER_UAS[0][0], 4_500_000)
    em.endpoint_record(t + 40, RecordKind.BINARY_DOWNLOAD, file_hash=hashlib.sha256(_hex(rng, 16).encode()).hexdigest(),
                       file_type="7z", source_url=lure_url)
    em.endpoint_record(t + 90, RecordKind.BINARY_EXECUTE, file_hash=hashlib.sha256(_hex(rng, 16).encode()).hexdigest(),
                       file_type="macho")
    em.proxy(t + 150, FLASH_UPDATE_HOST, f"https://{FLASH_UPDATE_HOST}/flashplayer/download/?installer=FP_32_osx", CURL_UA, 20_000_000)

    c2 = f"{_hex(rng, 12)}.{rng.choice(['xyz', 'top', 'club'])}"
    c2_ip = host_ip(c2)
    port = rng.randint(20000, 60000)
    for day_start in _days(start_ts, end_ts):
        t0 = max(start_ts + 600, day_start + 9 * 3600 + rng.randrange(1800))
        if t0 >= min(end_ts, day_start + DAY) - 6 * 3600:
            t0 = max(start_ts + 600, min(end_ts, day_start + DAY) - 6 * 3600)
        em.proxy(t0, "api.ipify.org", "https://api.ipify.org/?format=json", CURL_UA, 300)
        em.endpoint_record(t0 + 20, RecordKind.SCRIPT_EXECUTE, script_name="/usr/sbin/system_profiler SPHardwareDataType")
        em.endpoint_record(t0 + 25, RecordKind.SCRIPT_EXECUTE, script_name="/usr/sbin/ioreg -rd1 -c IOPlatformExpertDevice")
        blob = base64.b64encode(f"{em.endpoint}|{day_start}|{_hex(rng, 16)}".encode()).decode()
        exfil_ua = f"Mozilla/5.0 (Macintosh; {blob})"
        t = t0 + 60
        for _ in range(6):
            em.proxy(t, c2, f"https://{c2}/api/v1/{_hex(rng, 8)}", exfil_ua, 900)
            t += rng.randint(2400, 4200)
        for k in range(3):
            em.connection(t0 + 120 + k * 3600, c2_ip, port)


def emit_trojan(em: _Emitter, start_ts: int, rng: random.Random, end_ts: int) -> None:
    payload_url = f"https://{POPULAR_HOSTS[5]}/releases/{_hex(rng, 8)}/Installer.pkg"
    em.proxy(start_ts, POPULAR_HOSTS[5], payload_url, BROWSER_UAS[1][0], 3_000_000)
    em.endpoint_record(start_ts + 30, RecordKind.BINARY_DOWNLOAD, file_hash=hashlib.sha256(_hex(rng, 16).encode()).hexdigest(),
                       file_type="pkg", source_url=payload_url)
    c2_ip = f"198.51.{rng.randint(0, 255)}.{rng.randint(1, 250)}"
    port = rng.randint(20000, 60000)
    for day_start in _days(start_ts, end_ts):
        t0 = max(start_ts + 300, day_start + 10 * 3600 + rng.randrange(1800))
        for k in range(6):
            t = t0 + k * 3000
            em.proxy(t, c2_ip, f"http://{c2_ip}/gate.php?id={_hex(rng, 12)}", BROWSER_UAS[1][0], 700)
            em.flow(t + 5, c2_ip, None, port, 5200, 14, 2.0)
        em.endpoint_record(t0 + 100, RecordKind.BINARY_EXECUTE,
                           file_hash=hashlib.sha256(_hex(rng, 16).encode()).hexdigest(), file_type="macho")


def emit_lookalike(
    em: _Emitter, side: str, start_ts: int, rng: random.Random, end_ts: int, artifact_hashes: Sequence[str]
) -> None:
    port = rng.randint(20000, 60000)
    internal = f"10.30.{rng.randint(0, 255)}.{rng.randint(1, 250)}"
    service = f"ci-{_hex(rng, 6)}.devbox.example.com"
    api_ip = f"203.0.113.{rng.randint(1, 250)}"
    for day_start in _days(start_ts, end_ts):
        t0 = max(start_ts, day_start + 8 * 3600 + rng.randrange(3600))
        url = f"https://{POPULAR_HOSTS[5]}/artifacts/{_hex(rng, 10)}.zip"
        em.proxy(t0 - 30, POPULAR_HOSTS[5], url, BROWSER_UAS[0][0], 5_000_000)
        em.endpoint_record(t0 - 20, RecordKind.BINARY_DOWNLOAD, file_hash=rng.choice(artifact_hashes),
                           file_type="zip", source_url=url)
        if side == "endpoint":
            for k in range(2):
                em.endpoint_record(t0 + k * 7200, RecordKind.BINARY_EXECUTE,
                                   file_hash=hashlib.sha256(_hex(rng, 16).encode()).hexdigest(), file_type="macho")
            em.endpoint_record(t0 + 60, RecordKind.SCRIPT_EXECUTE, script_name="/usr/sbin/system_profiler -xml")
            for k in range(3):
                em.connection(t0 + 300 + k * 3600, internal, port)
        else:
            tool_ua = f"ci-agent/{rng.randint(1, 9)}.{rng.randint(0, 99)} build-{_hex(rng, 10)}"
            em.proxy(t0, "checkip.amazonaws.com", "https://checkip.amazonaws.com/", tool_ua, 200)
            for k in range(6):
                em.proxy(t0 + 120 + k * 3000, service, f"https://{service}/jobs/{_hex(rng, 6)}", tool_ua, 1500)
            for k in range(2):
                em.proxy(t0 + 600 + k * 9000, api_ip, f"http://{api_ip}/v2/status", tool_ua, 400)


# --------------------------------------------------------------------------
# generation


@dataclass
class SimulationOutput:
    datasets: dict
    labels: LabelFeed
    config: SimConfig

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for modality, ds in self.datasets.items():
            with open(os.path.join(out_dir, f"{modality.value}.jsonl"), "w", encoding="utf-8") as fh:
                for line in _lines(ds):
                    fh.write(line)
                    fh.write("\n")
        write_labels(os.path.join(out_dir, "labels.jsonl"), self.labels)


def _lines(ds: Dataset) -> Iterable[str]:
    for record in ds.records:
        yield dumps_record(record)


def _finalize(modality: Modality, records: list) -> Dataset:
    records.sort(key=lambda r: r.ts)
    seen = set()
    unique = []
    for record in records:
        key = dumps_record(record)
        if key not in seen:
            seen.add(key)
            unique.append(record)
    return Dataset(modality, tuple(unique), 0, len(records) - len(unique))


def generate(config: SimConfig) -> SimulationOutput:
    """Deterministic telemetry and ground-truth labels for ``config``."""
    config.validate()
    p = config.benign_profile
    world = _World(config)
    out = {m: [] for m in Modality}
    ids = config.entity_ids()
    ips = {e: local_ip(i) for i, e in enumerate(ids)}

    targeted = {e for sc in config.scenarios for e in sc.target_entities}
    plain = [e for e in ids if e not in targeted]
    n_conflict = int(round(config.ip_conflict_fraction * len(ids))) // 2 * 2
    n_conflict = min(n_conflict, len(plain) // 2 * 2)
    conflicted = _rng(config.seed, "conflicts").sample(plain, n_conflict) if n_conflict else []
    for a, b in zip(conflicted[::2], conflicted[1::2]):
        ips[b] = ips[a]

    for index, entity in enumerate(ids):
        rng = _rng(config.seed, "entity", entity)
        ua = rng.choices(world.ua_values, cum_weights=world.ua_cum)[0]
        em = _Emitter(entity, ips[entity], out)
        for day_start in _days(config.start_ts, config.end_ts):
            _benign_day(em, rng, world, day_start, ua, p)
            _noise_day(em, rng, world, day_start, ua, p)

    for k in range(config.unmanaged_clients):
        rng = _rng(config.seed, "unmanaged", k)
        em = _Emitter(None, f"10.99.{k // 250}.{k % 250 + 1}", out)
        ua = rng.choices(world.ua_values, cum_weights=world.ua_cum)[0]
        for day_start in _days(config.start_ts, config.end_ts):
            _benign_day(em, rng, world, day_start, ua, p)
            # guest devices probe for captive portals; nothing maps them to an endpoint
            em.proxy(_work_ts(rng, day_start, p), "connectivitycheck.gstatic.com",
                     "http://connectivitycheck.gstatic.com/generate_204", ua, 0, 204)

    labels = {e: BENIGN for e in ids}
    for i, sc in enumerate(config.scenarios):
        for entity in sc.target_entities:
            labels[entity] = sc.label
            rng = _rng(config.seed, "scenario", i, entity)
            em = _Emitter(entity, ips[entity], out)
            if sc.scenario_id == "shlayer_dropper":
                emit_shlayer(em, sc.start_ts, rng, config.end_ts)
            elif sc.scenario_id == "generic_trojan":
                emit_trojan(em, sc.start_ts, rng, config.end_ts)
            else:
                emit_lookalike(em, sc.params["side"], sc.start_ts, rng, config.end_ts, world.download_hashes)

    end = config.end_ts
    datasets = {m: _finalize(m, [r for r in recs if r.ts < end]) for m, recs in out.items()}
    return SimulationOutput(datasets, LabelFeed(labels), config)


def shlayer_records(entity: str, ip: str, start_ts: int, seed: int = 0, end_ts: int | None = None) -> dict:
    """Records of one Shlayer infection per modality (for scenario tests)."""
    out = {m: [] for m in Modality}
    emit_shlayer(_Emitter(entity, ip, out), start_ts, _rng(seed, "shlayer", entity), end_ts)
    return out
