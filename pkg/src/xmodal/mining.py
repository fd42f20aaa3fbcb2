"""Group-discriminative frequent itemsets.

Per-entity event windows become transactions. Transactions are partitioned by
the threat label of their entity, FP-Growth mines each non-benign group, and a
candidate survives only if its support is below ``max_support_other`` in
every other group (benign included).
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import kernels
from .errors import ConfigError
from .jsonio import read_json, read_jsonl, write_json, write_jsonl
from .matching import MergedDetections
from .telemetry import Modality

log = logging.getLogger(__name__)

BENIGN = "benign"
DEFAULT_WINDOW_BUCKETS = 288  # one day of 300 s buckets

CONFIG_MODALITIES = {
    "endpoint": frozenset({Modality.ENDPOINT}),
    "network": frozenset({Modality.PROXY_LOG, Modality.NETWORK_FLOW}),
    "combined": frozenset(Modality),
}


@dataclass(frozen=True, order=True)
class Transaction:
    entity: str
    window: int
    items: frozenset = field(compare=False)

    @property
    def key(self) -> tuple[str, int]:
        return self.entity, self.window


@dataclass(frozen=True)
class LabelFeed:
    assignments: Mapping[str, str] = field(default_factory=dict)

    def label_of(self, entity: str) -> str:
        return self.assignments.get(entity, BENIGN)

    def groups(self) -> list[str]:
        return sorted(set(self.assignments.values()))

    def __len__(self):
        return len(self.assignments)


def load_labels(path) -> LabelFeed:
    """Read ``{"entity_id", "label"}`` JSONL. An entity with two labels is an error."""
    assignments: dict[str, str] = {}
    try:
        rows = list(read_jsonl(path))
    except OSError as exc:
        raise ConfigError(f"cannot read label feed {path}: {exc}") from exc
    for row in rows:
        entity, label = row.get("entity_id"), row.get("label")
        if not isinstance(entity, str) or not entity or not isinstance(label, str) or not label:
            raise ConfigError(f"label feed {path}: bad row {row!r}")
        previous = assignments.setdefault(entity, label)
        if previous != label:
            raise ConfigError(
                f"label feed {path}: entity {entity!r} has several labels "
                f"({previous!r}, {label!r}); multi-label feeds are not supported"
            )
    return LabelFeed(assignments)


def write_labels(path, labels: LabelFeed) -> None:
    write_jsonl(path, ({"entity_id": e, "label": l} for e, l in sorted(labels.assignments.items())))


@dataclass(frozen=True)
class MiningParams:
    min_support_own: float = 0.3
    max_support_other: float = 0.05
    max_itemset_size: int = 4

    def __post_init__(self):
        if not 0 < self.min_support_own <= 1:
            raise ConfigError(f"min_support_own must be in (0, 1], got {self.min_support_own}")
        if not 0 < self.max_support_other <= 1:
            raise ConfigError(f"max_support_other must be in (0, 1], got {self.max_support_other}")
        if self.max_itemset_size < 1:
            raise ConfigError("max_itemset_size must be at least 1")

    def to_obj(self) -> dict:
        return {
            "min_support_own": self.min_support_own,
            "max_support_other": self.max_support_other,
            "max_itemset_size": self.max_itemset_size,
        }


@dataclass(frozen=True)
class FrequentItemset:
    items: frozenset
    support: float
    group: str
    other_support: Mapping[str, float] = field(default_factory=dict, compare=False, hash=False)

    @property
    def id(self) -> str:
        return f"{self.group}:{'+'.join(sorted(self.items))}"


@dataclass(frozen=True)
class GroupRuleSet:
    group: str
    rules: tuple
    params: MiningParams


# --------------------------------------------------------------------------
# transactions


def window_of(ts: int, quantum_seconds: int, window_buckets: int) -> int:
    return (ts // quantum_seconds) // window_buckets


def build_transactions(merged: MergedDetections, window_buckets: int = DEFAULT_WINDOW_BUCKETS) -> list[Transaction]:
    """One transaction per (entity, tumbling window) holding the distinct event types."""
    if window_buckets < 1:
        raise ValueError("window_buckets must be at least 1")
    q = merged.quantum_seconds
    windows: dict[tuple[str, int], set] = defaultdict(set)
    for entity, ev in merged.events():
        windows[(entity, window_of(ev.ts, q, window_buckets))].add(ev.event.event_type)
    return [Transaction(e, w, frozenset(items)) for (e, w), items in sorted(windows.items())]


def filter_modalities(merged: MergedDetections, config: str) -> MergedDetections:
    """Keep only events from the modality set of an ablation configuration."""
    try:
        allowed = CONFIG_MODALITIES[config]
    except KeyError:
        raise ConfigError(f"unknown modality configuration {config!r}") from None
    return merged.restrict(lambda _entity, ev: ev.modality in allowed)


def window_range(merged: MergedDetections, window_buckets: int) -> tuple[int, int] | None:
    ts = [ev.ts for _, ev in merged.events()]
    ts.extend(det.ts for _, det in merged.unresolved)
    if not ts:
        return None
    q = merged.quantum_seconds
    return window_of(min(ts), q, window_buckets), window_of(max(ts), q, window_buckets)


def split_window(merged: MergedDetections, window_buckets: int) -> int | None:
    """First window of the second half of the observed window range."""
    span = window_range(merged, window_buckets)
    if span is None:
        return None
    first, last = span
    return first + (last - first + 1) // 2


def select_windows(merged: MergedDetections, window_buckets: int, part: str, split: int | None) -> MergedDetections:
    """``part`` is ``train`` (windows < split), ``test`` (>= split) or ``all``."""
    if part == "all" or split is None:
        return merged
    q = merged.quantum_seconds
    if part == "train":
        return merged.restrict(lambda _e, ev: window_of(ev.ts, q, window_buckets) < split)
    if part == "test":
        return merged.restrict(lambda _e, ev: window_of(ev.ts, q, window_buckets) >= split)
    raise ConfigError(f"unknown window selection {part!r}")


# --------------------------------------------------------------------------
# FP-Growth


class _Node:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item, parent):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children = {}


class _FPTree:
    def __init__(self, weighted_paths: Iterable[tuple[Sequence, int]], min_count: int):
        paths = list(weighted_paths)
        counts: dict = defaultdict(int)
        for path, weight in paths:
            for item in path:
                counts[item] += weight
        frequent = {item: c for item, c in counts.items() if c >= min_count}
        # most frequent first; ties broken by item so the tree shape is canonical
        self.order = sorted(frequent, key=lambda item: (-frequent[item], item))
        rank = {item: i for i, item in enumerate(self.order)}
        self.item_counts = frequent
        self.root = _Node(None, None)
        self.header: dict = defaultdict(list)
        for path, weight in paths:
            kept = sorted((item for item in path if item in rank), key=rank.__getitem__)
            self._insert(kept, weight)

    def _insert(self, items, weight):
        node = self.root
        for item in items:
            child = node.children.get(item)
            if child is None:
                child = _Node(item, node)
                node.children[item] = child
                self.header[item].append(child)
            child.count += weight
            node = child

    def prefix_paths(self, item):
        for node in self.header[item]:
            path = []
            parent = node.parent
            while parent.item is not None:
                path.append(parent.item)
                parent = parent.parent
            if path:
                yield path, node.count


def _min_count(n: int, min_support: float) -> int:
    # smallest count whose support reaches the threshold, using the same float
    # comparison that defines support
    for c in range(n + 1):
        if c / n >= min_support:
            return c
    return n + 1


def _mine(tree: _FPTree, suffix: tuple, min_count: int, max_size: int, out: dict):
    for item in reversed(tree.order):
        itemset = suffix + (item,)
        out[frozenset(itemset)] = tree.item_counts[item]
        if len(itemset) < max_size:
            conditional = _FPTree(tree.prefix_paths(item), min_count)
            if conditional.order:
                _mine(conditional, itemset, min_count, max_size, out)


def canonical_key(itemset: frozenset) -> tuple:
    return (len(itemset), tuple(sorted(itemset)))


def fp_growth(
    transactions: Sequence[Transaction] | Sequence[Iterable[str]],
    min_support: float,
    max_itemset_size: int = 4,
) -> list[tuple[frozenset, float]]:
    """All itemsets of size 1..max_itemset_size with support >= min_support.

    Returned in canonical order: by size, then lexicographically.
    """
    if not 0 < min_support <= 1:
        raise ValueError(f"min_support must be in (0, 1], got {min_support}")
    if max_itemset_size < 1:
        raise ValueError("max_itemset_size must be at least 1")
    itemsets = [t.items if isinstance(t, Transaction) else frozenset(t) for t in transactions]
    n = len(itemsets)
    if n == 0:
        return []
    min_count = _min_count(n, min_support)
    tree = _FPTree(((items, 1) for items in itemsets), min_count)
    found: dict[frozenset, int] = {}
    _mine(tree, (), min_count, max_itemset_size, found)
    return [(s, found[s] / n) for s in sorted(found, key=canonical_key)]


# --------------------------------------------------------------------------
# group rules


class _Encoder:
    def __init__(self, vocabulary: Iterable[str]):
        self.index = {item: i for i, item in enumerate(sorted(set(vocabulary)))}

    @property
    def n_bits(self) -> int:
        return len(self.index)

    def encode(self, items: Iterable[str]) -> int:
        mask = 0
        for item in items:
            mask |= 1 << self.index[item]
        return mask


def partition(transactions: Sequence[Transaction], labels: LabelFeed) -> dict[str, list[Transaction]]:
    groups: dict[str, list[Transaction]] = defaultdict(list)
    for tx in transactions:
        groups[labels.label_of(tx.entity)].append(tx)
    return groups


def mine_group_rules(
    transactions: Sequence[Transaction],
    labels: LabelFeed,
    params: MiningParams = MiningParams(),
) -> dict[str, GroupRuleSet]:
    """Frequent itemsets of each threat group that are infrequent everywhere else."""
    threat_groups = sorted({g for g in labels.groups() if g != BENIGN})
    if not threat_groups:
        raise ConfigError("label feed has no threat label besides benign")
    groups = partition(transactions, labels)
    all_groups = sorted(set(groups) | set(threat_groups) | {BENIGN})
    encoder = _Encoder(item for tx in transactions for item in tx.items)
    masks = {g: [encoder.encode(tx.items) for tx in groups.get(g, [])] for g in all_groups}

    result = {}
    for group in threat_groups:
        own = groups.get(group, [])
        if not own:
            log.warning("group %r has no transactions; it yields no rules", group)
            result[group] = GroupRuleSet(group, (), params)
            continue
        candidates = fp_growth(own, params.min_support_own, params.max_itemset_size)
        cand_masks = [encoder.encode(items) for items, _ in candidates]
        other_support: dict[str, list[float]] = {}
        for other in all_groups:
            if other == group or not masks[other]:
                continue
            counts = kernels.support_counts(masks[other], cand_masks, encoder.n_bits)
            other_support[other] = [c / len(masks[other]) for c in counts]
        rules = []
        for i, (items, support) in enumerate(candidates):
            others = {g: s[i] for g, s in other_support.items()}
            if all(s < params.max_support_other for s in others.values()):
                rules.append(FrequentItemset(items, support, group, others))
        log.info("group %s: %d candidates, %d rules kept", group, len(candidates), len(rules))
        result[group] = GroupRuleSet(group, tuple(rules), params)
    return result


# --------------------------------------------------------------------------
# rules file


def rules_to_obj(rule_sets: Mapping[str, GroupRuleSet], params: MiningParams) -> dict:
    return {
        "params": params.to_obj(),
        "groups": {
            group: [
                {
                    "id": r.id,
                    "items": sorted(r.items),
                    "support": r.support,
                    "other_support": dict(sorted(r.other_support.items())),
                }
                for r in rs.rules
            ]
            for group, rs in sorted(rule_sets.items())
        },
    }


def rules_from_obj(obj: Mapping) -> dict[str, GroupRuleSet]:
    try:
        params = MiningParams(**obj["params"])
        out = {}
        for group, rows in obj["groups"].items():
            rules = tuple(
                FrequentItemset(
                    frozenset(r["items"]),
                    float(r["support"]),
                    group,
                    {str(k): float(v) for k, v in r.get("other_support", {}).items()},
                )
                for r in rows
            )
            out[group] = GroupRuleSet(group, rules, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed rules file: {exc}") from exc
    return out


def write_rules(path, rule_sets: Mapping[str, GroupRuleSet], params: MiningParams) -> None:
    write_json(path, rules_to_obj(rule_sets, params))


def read_rules(path) -> dict[str, GroupRuleSet]:
    try:
        obj = read_json(path)
    except OSError as exc:
        raise ConfigError(f"cannot read rules file {path}: {exc}") from exc
    return rules_from_obj(obj)
