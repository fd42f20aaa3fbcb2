from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from helpers import conn, dataset, ep_det, ip_det
from xmodal.framework import DetectionSet
from xmodal.matching import (
    EntityMap,
    InventoryClaim,
    build_entity_map,
    load_inventory,
    merge,
    merged_as_detection_sets,
    read_entity_map,
    read_merged,
    resolve,
    write_entity_map,
    write_merged,
)
from xmodal.telemetry import Modality

Q = 300
IP = "10.0.0.5"


def emap(*claims, inventory=()):
    return build_entity_map(dataset("endpoint", [conn(b * Q, e, ip) for e, ip, b in claims]), Q, inventory)


def test_unique_claim():
    assert emap(("E1", IP, 7)).assoc == {(IP, 7): "E1"}


def test_co_claim_discarded():
    m = emap(("E1", IP, 7), ("E2", IP, 7))
    assert (IP, 7) in m.discarded and (IP, 7) not in m.assoc


def test_buckets_independent():
    assert emap(("E1", IP, 7), ("E2", IP, 8)).assoc == {(IP, 7): "E1", (IP, 8): "E2"}


def test_inventory_claims_conflict_like_agent_claims():
    m = emap(("E1", IP, 7), inventory=[InventoryClaim(IP, "E9", 7 * Q + 5)])
    assert (IP, 7) in m.discarded
    m = emap(inventory=[InventoryClaim(IP, "E9", 3 * Q)])
    assert m.assoc == {(IP, 3): "E9"}


def test_resolve():
    m = emap(("E1", IP, 7), ("E1", "10.0.0.6", 8), ("E2", "10.0.0.6", 8))
    assert resolve(m, IP, 7 * Q + 299) == "E1"
    assert resolve(m, "10.0.0.6", 8 * Q) is None
    assert resolve(m, "10.9.9.9", 7 * Q) is None
    assert m.resolve(IP, 8 * Q) is None


def test_build_rejects_non_endpoint_dataset():
    with pytest.raises(ValueError):
        build_entity_map(dataset("proxy_log", []), Q)


def test_merge_endpoint_and_resolved_network():
    m = emap(("E1", IP, 7))
    merged = merge(
        [DetectionSet("a", Modality.ENDPOINT, (ep_det(7 * Q, "E1"),)),
         DetectionSet("b", Modality.PROXY_LOG, (ip_det(7 * Q + 1, IP),))],
        m,
    )
    assert len(merged.per_entity["E1"]) == 2
    assert [ev.modality for ev in merged.per_entity["E1"]] == [Modality.ENDPOINT, Modality.PROXY_LOG]


def test_merge_discarded_goes_unresolved():
    m = emap(("E1", IP, 7), ("E2", IP, 7))
    merged = merge([DetectionSet("b", Modality.PROXY_LOG, (ip_det(7 * Q, IP),))], m)
    assert merged.per_entity == {} and len(merged.unresolved) == 1


def test_merge_empty():
    merged = merge([], EntityMap(Q))
    assert merged.per_entity == {} and merged.unresolved == ()


def test_per_entity_sorted_by_ts():
    m = emap(("E1", IP, 1), ("E1", IP, 2))
    merged = merge(
        [DetectionSet("a", Modality.ENDPOINT, (ep_det(2 * Q, "E1"),)),
         DetectionSet("b", Modality.PROXY_LOG, (ip_det(Q, IP),))],
        m,
    )
    assert [ev.ts for ev in merged.per_entity["E1"]] == [Q, 2 * Q]


fixture = st.fixed_dictionaries(
    {
        "claims": st.lists(st.tuples(st.sampled_from(["E1", "E2", "E3", "E4"]), st.sampled_from(["10.0.0.1", "10.0.0.2", "10.0.0.3"]), st.integers(0, 6)), max_size=25),
        "ip_dets": st.lists(st.tuples(st.integers(0, 7 * Q - 1), st.sampled_from(["10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.9"])), max_size=30),
        "ep_dets": st.lists(st.tuples(st.integers(0, 7 * Q - 1), st.sampled_from(["E1", "E2", "E5"])), max_size=10),
    }
)


def _fixture_sets(fx):
    return [
        DetectionSet("net", Modality.NETWORK_FLOW, tuple(ip_det(ts, ip) for ts, ip in fx["ip_dets"])),
        DetectionSet("ep", Modality.ENDPOINT, tuple(ep_det(ts, e) for ts, e in fx["ep_dets"])),
    ]


@settings(max_examples=200)
@given(fixture)
def test_conflicted_pairs_never_attributed_and_counts_conserved(fx):
    m = emap(*fx["claims"])
    claimants = {}
    for e, ip, b in fx["claims"]:
        claimants.setdefault((ip, b), set()).add(e)
    conflicted = {k for k, v in claimants.items() if len(v) >= 2}
    sets = _fixture_sets(fx)
    merged = merge(sets, m)
    assert sum(len(s) for s in sets) == merged.attributed_count + len(merged.unresolved)
    attributed = Counter()
    for ts, ip in fx["ip_dets"]:
        key = (ip, ts // Q)
        if key in conflicted or key not in claimants:
            assert resolve(m, ip, ts) is None
        else:
            assert resolve(m, ip, ts) == next(iter(claimants[key]))
            attributed[next(iter(claimants[key]))] += 1
    for e, n in attributed.items():
        net_events = [ev for ev in merged.per_entity.get(e, ()) if ev.modality is Modality.NETWORK_FLOW]
        assert len(net_events) == n


@settings(max_examples=100)
@given(fixture)
def test_merge_is_idempotent(fx):
    merged = merge(_fixture_sets(fx), emap(*fx["claims"]))
    again = merge(merged_as_detection_sets(merged), EntityMap(Q))
    assert again.per_entity == merged.per_entity


def test_serialization_round_trips(tmp_path):
    m = emap(("E1", IP, 7), ("E2", IP, 7), ("E1", "10.0.0.6", 8))
    write_entity_map(tmp_path / "map.json", m)
    assert read_entity_map(tmp_path / "map.json") == m
    merged = merge(
        [DetectionSet("b", Modality.PROXY_LOG, (ip_det(7 * Q, IP), ip_det(8 * Q, "10.0.0.6"))),
         DetectionSet("a", Modality.ENDPOINT, (ep_det(1, "E3"),))],
        m,
    )
    write_merged(tmp_path / "merged.json", merged)
    assert read_merged(tmp_path / "merged.json") == merged


def test_load_inventory_skips_bad_rows(tmp_path):
    path = tmp_path / "inv.jsonl"
    path.write_text('{"ip":"10.0.0.1","endpoint_id":"E1","ts":5}\n{"ip":"bad","endpoint_id":"E1","ts":5}\n'
                    '{"ip":"10.0.0.2","endpoint_id":"E2","ts":-1}\n')
    assert load_inventory(path) == [InventoryClaim("10.0.0.1", "E1", 5)]


def test_sim_attribution_matches_owner(small_sim):
    """Every attributed network detection belongs to an endpoint that used that IP."""
    ips = {}
    for r in small_sim.datasets[Modality.ENDPOINT].records:
        if "local_ip" in r.attributes:
            ips.setdefault(r.endpoint_id, set()).add(r.attributes["local_ip"])
    for dset in small_sim.detection_sets:
        if dset.modality is Modality.ENDPOINT:
            continue
        for det in dset.detections:
            owner = resolve(small_sim.entity_map, det.entity.value, det.ts)
            if owner is not None:
                assert det.entity.value in ips[owner]
    assert small_sim.entity_map.discarded
