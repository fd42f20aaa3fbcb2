import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import brute_force_itemsets
from xmodal.errors import ConfigError
from xmodal.framework import Event
from xmodal.matching import MergedDetections, MergedEvent
from xmodal.mining import (
    BENIGN,
    LabelFeed,
    MiningParams,
    Transaction,
    build_transactions,
    canonical_key,
    filter_modalities,
    fp_growth,
    load_labels,
    mine_group_rules,
    read_rules,
    select_windows,
    split_window,
    write_labels,
    write_rules,
)
from xmodal.telemetry import Modality

Q = 300


def merged_of(events, q=Q):
    """events: {entity: [(ts, event_type, modality)]}"""
    return MergedDetections(
        q,
        {e: tuple(MergedEvent(ts, Event(t), Modality(m)) for ts, t, m in evs) for e, evs in events.items()},
    )


def supports(result):
    return {s: round(v, 3) for s, v in result}


# ---- fp_growth


def test_three_transaction_example():
    out = fp_growth([{"a", "b", "c"}, {"a", "b"}, {"a"}], 0.6)
    assert supports(out) == {frozenset("a"): 1.0, frozenset("b"): 0.667, frozenset("ab"): 0.667}
    assert [sorted(s) for s, _ in out] == [["a"], ["b"], ["a", "b"]]


def test_unanimous_item():
    assert fp_growth([{"a"}, {"a"}], 1.0) == [(frozenset("a"), 1.0)]


def test_single_transaction_all_subsets():
    out = fp_growth([{"x", "y"}], 1.0, max_itemset_size=2)
    assert [s for s, _ in out] == [frozenset("x"), frozenset("y"), frozenset("xy")]


@pytest.mark.parametrize("bad", [0, -0.1, 1.0000001, 2])
def test_min_support_range(bad):
    with pytest.raises(ValueError):
        fp_growth([{"a"}], bad)


def test_max_size_bounds_output():
    out = fp_growth([set("abcde")] * 3, 0.5, max_itemset_size=2)
    assert max(len(s) for s, _ in out) == 2
    assert len(out) == 5 + 10


def test_empty_input():
    assert fp_growth([], 0.5) == []


def test_accepts_transactions():
    txs = [Transaction("E1", 0, frozenset("ab")), Transaction("E2", 0, frozenset("a"))]
    assert supports(fp_growth(txs, 0.5)) == {frozenset("a"): 1.0, frozenset("b"): 0.5, frozenset("ab"): 0.5}


items = st.sampled_from("abcdefghijklmno")
tx_lists = st.lists(st.frozensets(items, min_size=1, max_size=8), min_size=1, max_size=64)
supports_st = st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.25, 1 / 3])


@settings(max_examples=150, deadline=None)
@given(tx_lists, supports_st, st.integers(1, 5))
def test_matches_brute_force_oracle(txs, min_support, max_size):
    got = fp_growth(txs, min_support, max_size)
    oracle = brute_force_itemsets(txs, min_support, max_size)
    assert {s: v for s, v in got} == pytest.approx(oracle)
    assert set(s for s, _ in got) == set(oracle)


@settings(max_examples=100, deadline=None)
@given(tx_lists, supports_st)
def test_downward_closure(txs, min_support):
    got = dict(fp_growth(txs, min_support, 4))
    for itemset, support in got.items():
        for item in itemset:
            sub = itemset - {item}
            if sub:
                assert sub in got and got[sub] >= support


@settings(max_examples=60, deadline=None)
@given(tx_lists, supports_st, st.randoms(use_true_random=False))
def test_order_invariant_canonical_output(txs, min_support, rnd):
    got = fp_growth(txs, min_support)
    shuffled = list(txs)
    rnd.shuffle(shuffled)
    assert fp_growth(shuffled, min_support) == got
    keys = [canonical_key(s) for s, _ in got]
    assert keys == sorted(keys)


# ---- transactions


def test_multiplicity_dropped():
    merged = merged_of({"E1": [(0, "A", "endpoint"), (10, "A", "endpoint"), (20, "B", "proxy_log")]})
    (tx,) = build_transactions(merged, 288)
    assert tx.items == frozenset("AB")


def test_tumbling_windows():
    merged = merged_of({"E1": [(0, "A", "endpoint"), (10 * Q, "A", "endpoint")]})
    txs = build_transactions(merged, 5)
    assert [(t.window, sorted(t.items)) for t in txs] == [(0, ["A"]), (2, ["A"])]


def test_empty_merged():
    assert build_transactions(MergedDetections(Q), 288) == []
    with pytest.raises(ValueError):
        build_transactions(MergedDetections(Q), 0)


def test_filter_modalities():
    merged = merged_of({"E1": [(0, "A", "endpoint"), (1, "B", "proxy_log"), (2, "C", "network_flow")]})
    assert [ev.event.event_type for ev in filter_modalities(merged, "endpoint").per_entity["E1"]] == ["A"]
    assert [ev.event.event_type for ev in filter_modalities(merged, "network").per_entity["E1"]] == ["B", "C"]
    with pytest.raises(ConfigError):
        filter_modalities(merged, "email")


def test_split_halves_of_observed_windows():
    wb = 1
    merged = merged_of({"E1": [(w * Q, "A", "endpoint") for w in (3, 4, 5, 6, 7)]})
    assert split_window(merged, wb) == 5
    train = select_windows(merged, wb, "train", 5)
    test = select_windows(merged, wb, "test", 5)
    assert [ev.ts // Q for ev in train.per_entity["E1"]] == [3, 4]
    assert [ev.ts // Q for ev in test.per_entity["E1"]] == [5, 6, 7]
    assert select_windows(merged, wb, "all", 5) is merged
    assert split_window(MergedDetections(Q), wb) is None


# ---- group rules


def txs_for(group_items):
    """group_items: {entity: [items per window]} -> transactions"""
    out = []
    for entity, windows in group_items.items():
        for w, items in enumerate(windows):
            out.append(Transaction(entity, w, frozenset(items)))
    return out


def test_discriminative_itemset_kept():
    labels = LabelFeed({"M1": "trojan", "B1": BENIGN})
    txs = txs_for({"M1": [{"x", "y"}] * 4 + [{"z"}], "B1": [{"z"}] * 5})
    rules = mine_group_rules(txs, labels, MiningParams(0.7, 0.05, 4))
    assert [sorted(r.items) for r in rules["trojan"].rules] == [["x"], ["y"], ["x", "y"]]
    assert rules["trojan"].rules[0].support == pytest.approx(0.8)
    assert BENIGN not in rules


def test_itemset_frequent_elsewhere_dropped():
    labels = LabelFeed({"M1": "trojan", "W1": "worm"})
    txs = txs_for({"M1": [{"x"}] * 4 + [{"y"}], "W1": [{"x"}] * 9 + [{"q"}]})
    rules = mine_group_rules(txs, labels, MiningParams(0.3, 0.05, 4))
    assert all("x" not in r.items for r in rules["trojan"].rules)


def test_shared_noise_singleton_dropped_from_both_groups():
    labels = LabelFeed({"T": "trojan", "W": "worm", "B": BENIGN})
    txs = txs_for({
        "T": [{"noise", "t1"}] * 5,
        "W": [{"noise", "w1"}] * 5,
        "B": [{"other"}] * 5,
    })
    rules = mine_group_rules(txs, labels)
    for group in ("trojan", "worm"):
        assert all(r.items != frozenset({"noise"}) for r in rules[group].rules)
    assert frozenset({"t1"}) in {r.items for r in rules["trojan"].rules}


def test_group_without_transactions_yields_no_rules(caplog):
    labels = LabelFeed({"T": "trojan", "W": "worm"})
    rules = mine_group_rules(txs_for({"T": [{"a"}]}), labels)
    assert rules["worm"].rules == ()
    assert "no transactions" in caplog.text


def test_benign_only_feed_is_a_config_error():
    with pytest.raises(ConfigError):
        mine_group_rules(txs_for({"B": [{"a"}]}), LabelFeed({"B": BENIGN}))


def test_params_validated():
    for bad in ({"min_support_own": 0}, {"max_support_other": 1.5}, {"max_itemset_size": 0}):
        with pytest.raises(ConfigError):
            MiningParams(**bad)


@settings(max_examples=80, deadline=None)
@given(
    st.dictionaries(
        st.sampled_from(["E1", "E2", "E3", "E4", "E5", "E6"]),
        st.lists(st.frozensets(st.sampled_from("abcdef"), min_size=1, max_size=4), min_size=1, max_size=6),
        min_size=2,
    ),
    st.lists(st.sampled_from(["trojan", "worm", BENIGN]), min_size=6, max_size=6),
)
def test_rules_satisfy_support_bounds(windows, label_list):
    labels = LabelFeed({f"E{i + 1}": label_list[i] for i in range(6)} | {"E1": "trojan"})
    txs = txs_for(windows)
    params = MiningParams(0.3, 0.2, 4)
    rules = mine_group_rules(txs, labels, params)
    by_group = {}
    for tx in txs:
        by_group.setdefault(labels.label_of(tx.entity), []).append(tx.items)
    for group, rule_set in rules.items():
        for rule in rule_set.rules:
            own = by_group[group]
            assert sum(rule.items <= t for t in own) / len(own) >= params.min_support_own
            for other, other_txs in by_group.items():
                if other != group:
                    assert sum(rule.items <= t for t in other_txs) / len(other_txs) < params.max_support_other


# ---- files


def test_labels_round_trip_and_multi_label_rejected(tmp_path):
    feed = LabelFeed({"E2": "trojan", "E1": BENIGN})
    write_labels(tmp_path / "l.jsonl", feed)
    assert load_labels(tmp_path / "l.jsonl") == feed
    (tmp_path / "m.jsonl").write_text('{"entity_id":"E1","label":"trojan"}\n{"entity_id":"E1","label":"worm"}\n')
    with pytest.raises(ConfigError, match="multi-label"):
        load_labels(tmp_path / "m.jsonl")
    with pytest.raises(ConfigError):
        load_labels(tmp_path / "missing.jsonl")


def test_rules_round_trip(tmp_path):
    labels = LabelFeed({"M1": "trojan", "B1": BENIGN})
    rules = mine_group_rules(txs_for({"M1": [{"x", "y"}] * 3, "B1": [{"z"}] * 3}), labels)
    write_rules(tmp_path / "r.json", rules, MiningParams())
    back = read_rules(tmp_path / "r.json")
    assert [r.items for r in back["trojan"].rules] == [r.items for r in rules["trojan"].rules]
    obj = json.loads((tmp_path / "r.json").read_text())
    assert obj["groups"]["trojan"][0]["id"] == "trojan:x"
    (tmp_path / "bad.json").write_text('{"params": {}}')
    with pytest.raises(ConfigError):
        read_rules(tmp_path / "bad.json")


def test_mining_uses_both_kernel_backends_identically(monkeypatch):
    from xmodal import kernels

    rng = random.Random(3)
    entities = {f"E{i}": [set(rng.sample("abcdefgh", 3)) for _ in range(5)] for i in range(20)}
    labels = LabelFeed({e: ("trojan" if i < 6 else BENIGN) for i, e in enumerate(entities)})
    txs = txs_for(entities)
    results = []
    for backend in kernels.available_backends():
        monkeypatch.setattr(kernels, "BACKEND", backend)
        results.append(mine_group_rules(txs, labels, MiningParams(0.3, 0.3, 4)))
    assert all(r == results[0] for r in results)
