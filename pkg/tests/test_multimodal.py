import itertools

import pytest
from hypothesis import given, strategies as st

from xmodal.errors import ConfigError
from xmodal.framework import Event
from xmodal.matching import MergedDetections, MergedEvent
from xmodal.mining import FrequentItemset, GroupRuleSet, MiningParams, build_transactions
from xmodal.multimodal import (
    DEFAULT_SEVERITY,
    SeverityOrder,
    ThreatDetection,
    classify,
    detect,
    load_severity,
    match_entity,
    read_detection_rows,
    write_detections,
)
from xmodal.telemetry import Modality

Q, WB = 300, 288
SEV = SeverityOrder(("trojan", "dropper_shlayer", "adware", "benign"))


def rules_of(spec):
    """{group: [items, ...]} -> GroupRuleSets"""
    return {
        g: GroupRuleSet(g, tuple(FrequentItemset(frozenset(i), 0.5, g) for i in items), MiningParams())
        for g, items in spec.items()
    }


def merged_of(events):
    return MergedDetections(
        Q, {e: tuple(MergedEvent(ts, Event(t), Modality.ENDPOINT) for ts, t in evs) for e, evs in events.items()}
    )


def test_full_containment():
    rules = rules_of({"trojan": [{"a"}, {"a", "b"}], "adware": [{"z"}]})
    assert match_entity({"a", "b"}, rules) == {"trojan": 2}


def test_empty_items():
    assert match_entity(set(), rules_of({"trojan": [{"a"}]})) == {}


def test_subset_semantics():
    assert match_entity({"a"}, rules_of({"trojan": [{"a", "b"}]})) == {}


def test_classify_strict_max():
    assert classify({"trojan": 3, "adware": 1}, SEV) == "trojan"
    assert classify({"trojan": 1, "adware": 3}, SEV) == "adware"


def test_classify_tie_goes_to_more_severe():
    assert classify({"trojan": 2, "adware": 2}, SEV) == "trojan"
    assert classify({"adware": 2, "dropper_shlayer": 2}, SEV) == "dropper_shlayer"


def test_classify_empty():
    assert classify({}, SEV) is None


def test_classify_unranked_label():
    with pytest.raises(ConfigError, match="worm"):
        classify({"worm": 1}, SEV)


@given(st.dictionaries(st.sampled_from(DEFAULT_SEVERITY[:8]), st.integers(1, 4), min_size=1), st.randoms(use_true_random=False))
def test_classify_argmax_invariant_under_insertion_order(counts, rnd):
    keys = list(counts)
    rnd.shuffle(keys)
    shuffled = {k: counts[k] for k in keys}
    sev = SeverityOrder()
    label = classify(shuffled, sev)
    assert label == classify(counts, sev)
    best = max(counts.values())
    assert counts[label] == best
    assert all(sev.rank(label) <= sev.rank(k) for k, v in counts.items() if v == best)


def test_severity_rejects_duplicates():
    with pytest.raises(ConfigError):
        SeverityOrder(("a", "a"))


def test_load_severity_formats(tmp_path):
    (tmp_path / "a.json").write_text('{"ranking": ["x", "y"]}')
    (tmp_path / "b.json").write_text('["x", "y"]')
    (tmp_path / "c.json").write_text('{"ranking": "x"}')
    assert load_severity(tmp_path / "a.json") == load_severity(tmp_path / "b.json") == SeverityOrder(("x", "y"))
    with pytest.raises(ConfigError):
        load_severity(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_severity(tmp_path / "missing.json")


def test_detect_windows_and_timestamps():
    merged = merged_of({"E1": [(10, "a"), (20, "b"), (WB * Q + 5, "a")], "E2": [(30, "n")]})
    rules = rules_of({"trojan": [{"a", "b"}, {"a"}]})
    dets = detect(merged, rules, SEV, WB)
    assert [(d.entity, d.window, d.label, d.match_counts["trojan"]) for d in dets] == [("E1", 0, "trojan", 2), ("E1", 1, "trojan", 1)]
    first = dets[0]
    assert first.ts == (WB - 1) * Q
    assert (first.first_event_ts, first.last_event_ts) == (10, 20)
    assert all(r.items <= {"a", "b"} and r.group == "trojan" for r in first.matched_rules)


def test_detect_no_match_and_empty():
    rules = rules_of({"trojan": [{"a"}]})
    assert detect(merged_of({"E2": [(1, "noise")]}), rules, SEV, WB) == []
    assert detect(MergedDetections(Q), rules, SEV, WB) == []


def test_detect_requires_ranked_rule_groups():
    with pytest.raises(ConfigError, match="worm"):
        detect(merged_of({"E1": [(1, "a")]}), rules_of({"worm": [{"a"}]}), SEV, WB)


@given(st.frozensets(st.sampled_from("abcdef")), st.frozensets(st.sampled_from("abcdef")))
def test_adding_events_never_lowers_match_counts(items, extra):
    rules = rules_of({"trojan": [{"a"}, {"b", "c"}, {"d", "e", "f"}], "adware": [{"c"}, {"a", "f"}]})
    before = match_entity(items, rules)
    after = match_entity(items | extra, rules)
    assert all(after.get(g, 0) >= n for g, n in before.items())


def test_detections_are_auditable(small_sim):
    from xmodal.mining import mine_group_rules

    txs = build_transactions(small_sim.merged, WB)
    rules = mine_group_rules(txs, small_sim.labels)
    items = {tx.key: tx.items for tx in txs}
    dets = detect(small_sim.merged, rules, SeverityOrder(), WB)
    assert dets
    for det in dets:
        assert det.matched_rules
        assert all(r.items <= items[(det.entity, det.window)] and r.group == det.label for r in det.matched_rules)


def test_detections_file_round_trip(tmp_path):
    det = ThreatDetection(5, "E1", "trojan", (FrequentItemset(frozenset("ab"), 0.5, "trojan"),), {"trojan": 1}, 0, 1, 2)
    write_detections(tmp_path / "d.jsonl", [det])
    (row,) = read_detection_rows(tmp_path / "d.jsonl")
    assert row == {"ts": 5, "entity_id": "E1", "label": "trojan", "matched_rules": ["trojan:a+b"],
                   "match_counts": {"trojan": 1}, "window": 0, "first_event_ts": 1, "last_event_ts": 2}


def test_every_tie_permutation_prefers_the_severe_label():
    labels = ["trojan", "dropper_shlayer", "adware"]
    for perm in itertools.permutations(labels):
        assert classify({label: 2 for label in perm}, SEV) == "trojan"
