"""Final multi-modal detector: rule matching, group choice and severity tie-break."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import kernels
from .errors import ConfigError
from .jsonio import read_json, read_jsonl, write_jsonl
from .matching import MergedDetections
from .mining import DEFAULT_WINDOW_BUCKETS, FrequentItemset, GroupRuleSet, build_transactions, window_of

DEFAULT_SEVERITY = (
    "trojan",
    "dropper_shlayer",
    "dropper",
    "worm",
    "downloader",
    "malware_distribution",
    "fake_search",
    "pua_genieo",
    "pua_patchbrowse",
    "pua_pirrit",
    "pua_arcadeyum",
    "pua_conduit",
    "pua_crossrider",
    "ad_injector",
    "benign",
)


@dataclass(frozen=True)
class SeverityOrder:
    """Threat labels from most to least severe."""

    ranking: tuple = DEFAULT_SEVERITY

    def __post_init__(self):
        ranking = tuple(self.ranking)
        if len(set(ranking)) != len(ranking):
            raise ConfigError("severity ranking contains duplicate labels")
        object.__setattr__(self, "ranking", ranking)
        object.__setattr__(self, "_rank", {label: i for i, label in enumerate(ranking)})

    def rank(self, label: str) -> int:
        try:
            return self._rank[label]
        except KeyError:
            raise ConfigError(f"label {label!r} is not ranked in the severity order") from None

    def __contains__(self, label: str) -> bool:
        return label in self._rank


def load_severity(path) -> SeverityOrder:
    try:
        obj = read_json(path)
    except OSError as exc:
        raise ConfigError(f"cannot read severity file {path}: {exc}") from exc
    ranking = obj.get("ranking") if isinstance(obj, dict) else obj
    if not isinstance(ranking, list) or not all(isinstance(x, str) for x in ranking):
        raise ConfigError(f"severity file {path} must hold a list of labels")
    return SeverityOrder(tuple(ranking))


@dataclass(frozen=True)
class ThreatDetection:
    ts: int
    entity: str
    label: str
    matched_rules: tuple
    match_counts: Mapping[str, int] = field(hash=False)
    window: int = 0
    first_event_ts: int = 0
    last_event_ts: int = 0

    def to_obj(self) -> dict:
        return {
            "ts": self.ts,
            "entity_id": self.entity,
            "label": self.label,
            "matched_rules": [r.id for r in self.matched_rules],
            "match_counts": dict(sorted(self.match_counts.items())),
            "window": self.window,
            "first_event_ts": self.first_event_ts,
            "last_event_ts": self.last_event_ts,
        }


def match_entity(items: Iterable[str], rules: Mapping[str, GroupRuleSet]) -> dict[str, int]:
    """Per group, the number of its rules contained in ``items``; zero counts omitted."""
    items = frozenset(items)
    counts = {}
    for group, rule_set in rules.items():
        n = sum(1 for r in rule_set.rules if r.items <= items)
        if n:
            counts[group] = n
    return counts


def classify(match_counts: Mapping[str, int], severity: SeverityOrder) -> str | None:
    """Group with the most matching rules; exact ties go to the more severe label."""
    if not match_counts:
        return None
    ranks = {label: severity.rank(label) for label in match_counts}
    return min(match_counts, key=lambda label: (-match_counts[label], ranks[label]))


def _check_ranked(rules: Mapping[str, GroupRuleSet], severity: SeverityOrder) -> None:
    unranked = sorted(g for g, rs in rules.items() if rs.rules and g not in severity)
    if unranked:
        raise ConfigError(f"labels missing from the severity order: {', '.join(unranked)}")


def detect(
    merged: MergedDetections,
    rules: Mapping[str, GroupRuleSet],
    severity: SeverityOrder = SeverityOrder(),
    window_buckets: int = DEFAULT_WINDOW_BUCKETS,
) -> list[ThreatDetection]:
    """One threat detection per (entity, window) whose itemset matches some rule."""
    _check_ranked(rules, severity)
    transactions = build_transactions(merged, window_buckets)
    if not transactions:
        return []
    q = merged.quantum_seconds
    times: dict[tuple[str, int], list[int]] = defaultdict(list)
    for entity, ev in merged.events():
        times[(entity, window_of(ev.ts, q, window_buckets))].append(ev.ts)

    groups = sorted(rules)
    flat: list[FrequentItemset] = [r for g in groups for r in rules[g].rules]
    vocabulary = sorted({i for r in flat for i in r.items} | {i for t in transactions for i in t.items})
    index = {item: i for i, item in enumerate(vocabulary)}

    def encode(items):
        mask = 0
        for item in items:
            mask |= 1 << index[item]
        return mask

    rule_masks = [encode(r.items) for r in flat]
    rule_groups = [groups.index(r.group) for r in flat]
    tx_masks = [encode(t.items) for t in transactions]
    counts = kernels.match_counts(tx_masks, rule_masks, rule_groups, len(groups), len(vocabulary))

    out = []
    for tx, row in zip(transactions, counts):
        match = {groups[g]: c for g, c in enumerate(row) if c}
        label = classify(match, severity)
        if label is None:
            continue
        matched = tuple(r for r in rules[label].rules if r.items <= tx.items)
        ts_list = times[tx.key]
        last_bucket = (tx.window + 1) * window_buckets - 1
        out.append(
            ThreatDetection(
                ts=last_bucket * q,
                entity=tx.entity,
                label=label,
                matched_rules=matched,
                match_counts=match,
                window=tx.window,
                first_event_ts=min(ts_list),
                last_event_ts=max(ts_list),
            )
        )
    return out


def write_detections(path, detections: Sequence[ThreatDetection]) -> None:
    write_jsonl(path, (d.to_obj() for d in detections))


def read_detection_rows(path) -> list[dict]:
    """Final detections as plain rows (``entity_id``, ``label``, ...)."""
    try:
        return list(read_jsonl(path))
    except OSError as exc:
        raise ConfigError(f"cannot read detections {path}: {exc}") from exc
