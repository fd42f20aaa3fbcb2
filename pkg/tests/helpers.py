"""Record builders and independent reference implementations for tests."""
from __future__ import annotations

import os
import itertools
from fractions import Fraction

from xmodal.framework import Event, ModalityEntity, UnimodalDetection
from xmodal.telemetry import Dataset, EndpointRecord, Modality, NetworkFlowRecord, ProxyLogRecord, RecordKind

UA = "Mozilla/5.0 test"


def proxy(ts, client="10.0.0.1", host="example.com", url=None, ua=UA, nbytes=100, status=200):
    return ProxyLogRecord(ts, client, host, url or f"https://{host}/", ua, nbytes, status)


def flow(ts, client="10.0.0.1", server="93.184.216.34", server_name="example.com"):
    return NetworkFlowRecord(ts, client, server, 1000, 10, 1.0, server_name)


def endpoint(ts, eid="E1", kind=RecordKind.BINARY_EXECUTE, **attributes):
    return EndpointRecord(ts, eid, RecordKind(kind), {k: str(v) for k, v in attributes.items()})


def conn(ts, eid, local_ip, remote_ip="93.184.216.34", port=443):
    return endpoint(ts, eid, RecordKind.NETWORK_CONNECTION, local_ip=local_ip, remote_ip=remote_ip, remote_port=port)


def dataset(modality, records):
    return Dataset(Modality(modality), tuple(sorted(records, key=lambda r: r.ts)))


def ip_det(ts, ip, event_type="raw_ip_access"):
    return UnimodalDetection(ts, ModalityEntity.ip(ip), Event(event_type, {}))


def ep_det(ts, eid, event_type="unusual_file_hash"):
    return UnimodalDetection(ts, ModalityEntity.endpoint(eid), Event(event_type, {}))


def brute_force_itemsets(transactions, min_support, max_size):
    """Enumerate every subset of the item universe and count it directly.

    Uses exact rational arithmetic for the threshold, returns {frozenset: support}.
    """
    transactions = [frozenset(t) for t in transactions]
    n = len(transactions)
    universe = sorted(set().union(*transactions)) if transactions else []
    threshold = Fraction(min_support).limit_denominator(10**9)
    out = {}
    for size in range(1, min(max_size, len(universe)) + 1):
        for combo in itertools.combinations(universe, size):
            cand = frozenset(combo)
            count = sum(1 for t in transactions if cand <= t)
            if count and Fraction(count, n) >= threshold:
                out[cand] = count / n
    return out


# --------------------------------------------------------------------------
# CLI chaining, laid out exactly like the ``run`` command's output directory

PIPELINE_ARTIFACTS = (
    "ingest/network_flow.jsonl", "ingest/proxy_log.jsonl", "ingest/endpoint.jsonl",
    "events.jsonl", "entity_map.json", "merged.json",
    "rules.json", "rules.endpoint.json", "rules.network.json",
    "detections.jsonl", "detections.endpoint.jsonl", "detections.network.jsonl",
    "report/efficacy.txt", "report/efficacy.csv",
)


def write_pipeline_config(path, data_dir, out_dir, **extra):
    import json
    obj = {
        "inputs": {m: os.path.join(data_dir, f"{m}.jsonl") for m in ("network_flow", "proxy_log", "endpoint", "labels")},
        "output_dir": str(out_dir),
    }
    obj.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    return path


def chain_cli(data_dir, out_dir):
    """Run every stage as its own subcommand; return the list of exit codes."""
    from xmodal.cli import main
    from xmodal.pipeline import artifact_name

    d = lambda name: os.path.join(data_dir, name)
    o = lambda name: os.path.join(out_dir, name)
    os.makedirs(o("ingest"), exist_ok=True)
    codes = []
    for m in ("network_flow", "proxy_log", "endpoint"):
        codes.append(main(["ingest", "--modality", m, "--in", d(f"{m}.jsonl"), "--out", o(f"ingest/{m}.jsonl")]))
    codes.append(main(["events", "--network-flow", o("ingest/network_flow.jsonl"), "--proxy-log",
                       o("ingest/proxy_log.jsonl"), "--endpoint", o("ingest/endpoint.jsonl"), "--out", o("events.jsonl")]))
    codes.append(main(["match", "--endpoint", o("ingest/endpoint.jsonl"), "--out", o("entity_map.json"),
                       "--events", o("events.jsonl"), "--merged-out", o("merged.json")]))
    specs = []
    for config in ("endpoint", "network", "combined"):
        rules, dets = o(artifact_name("rules", config, "json")), o(artifact_name("detections", config, "jsonl"))
        codes.append(main(["mine", "--merged", o("merged.json"), "--labels", d("labels.jsonl"), "--out", rules,
                           "--modalities", config]))
        codes.append(main(["detect", "--merged", o("merged.json"), "--rules", rules, "--out", dets,
                           "--modalities", config]))
        specs.append(f"{config}={dets}")
    codes.append(main(["evaluate", "--detections", *specs, "--truth", d("labels.jsonl"), "--out", o("report"),
                       "--merged", o("merged.json")]))
    return codes


# pass/fail lines recorded by the acceptance suite; conftest echoes them in the summary
ACCEPTANCE_LINES: list = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
