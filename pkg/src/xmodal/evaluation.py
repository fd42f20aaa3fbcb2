"""Per-family precision/recall over endpoint-only, network-only and combined rules."""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .matching import MergedDetections
from .mining import (
    BENIGN,
    CONFIG_MODALITIES,
    DEFAULT_WINDOW_BUCKETS,
    GroupRuleSet,
    LabelFeed,
    MiningParams,
    build_transactions,
    filter_modalities,
    mine_group_rules,
    select_windows,
    split_window,
)
from .multimodal import SeverityOrder, ThreatDetection, detect

log = logging.getLogger(__name__)

CONFIGURATIONS = ("endpoint", "network", "combined")
SCORING_UNITS = ("entity", "window")


@dataclass(frozen=True)
class ConfigScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None


@dataclass(frozen=True)
class EfficacyRow:
    family: str
    scores: Mapping[str, ConfigScore] = field(default_factory=dict)


def fmt(value: float | None, digits: int = 2) -> str:
    return "nan" if value is None else f"{value:.{digits}f}"


def _entity_label(det) -> tuple[str, str]:
    if isinstance(det, ThreatDetection):
        return det.entity, det.label
    return det["entity_id"], det["label"]


def score_families(detections: Iterable, truth: LabelFeed) -> dict[str, ConfigScore]:
    """Per-entity scoring: an entity is detected as F if any of its windows is."""
    detected: dict[str, set[str]] = {}
    for det in detections:
        entity, label = _entity_label(det)
        if entity not in truth.assignments:
            log.warning("entity %r is not in the ground truth; scored as benign", entity)
        detected.setdefault(entity, set()).add(label)
    families = {label for label in truth.assignments.values() if label != BENIGN}
    families |= {label for labels in detected.values() for label in labels}
    families.discard(BENIGN)
    scores = {}
    for family in sorted(families):
        truth_f = {e for e, label in truth.assignments.items() if label == family}
        det_f = {e for e, labels in detected.items() if family in labels}
        scores[family] = ConfigScore(len(truth_f & det_f), len(det_f - truth_f), len(truth_f - det_f))
    return scores


def score_windows(detections: Iterable, truth: LabelFeed, windows: Iterable[tuple[str, int]]) -> dict[str, ConfigScore]:
    """Per-window scoring over the observed (entity, window) units.

    A window of a truth-F entity is TP if detected as F and FN otherwise; a
    window detected as F on any other entity is FP.
    """
    detected: dict[tuple[str, int], set[str]] = {}
    for det in detections:
        if isinstance(det, ThreatDetection):
            key, label = (det.entity, det.window), det.label
        else:
            key, label = (det["entity_id"], int(det["window"])), det["label"]
        detected.setdefault(key, set()).add(label)
    units = set(windows) | set(detected)
    families = {label for label in truth.assignments.values() if label != BENIGN}
    families |= {label for labels in detected.values() for label in labels}
    families.discard(BENIGN)
    scores = {}
    for family in sorted(families):
        tp = fp = fn = 0
        for unit in units:
            hit = family in detected.get(unit, ())
            if truth.label_of(unit[0]) == family:
                tp += hit
                fn += not hit
            else:
                fp += hit
        scores[family] = ConfigScore(tp, fp, fn)
    return scores


def evaluate(detections: Iterable, truth: LabelFeed, config: str = "combined") -> list[EfficacyRow]:
    return [EfficacyRow(f, {config: s}) for f, s in score_families(detections, truth).items()]


def combine_rows(per_config: Mapping[str, Mapping[str, ConfigScore]], truth: LabelFeed) -> list[EfficacyRow]:
    """Merge per-configuration scores into one row per family, sorted by family."""
    families = sorted({f for scores in per_config.values() for f in scores})
    rows = []
    for family in families:
        scores = {}
        for config, fam_scores in per_config.items():
            score = fam_scores.get(family)
            if score is None:
                n_truth = sum(1 for label in truth.assignments.values() if label == family)
                score = ConfigScore(0, 0, n_truth)
            scores[config] = score
        rows.append(EfficacyRow(family, scores))
    return rows


@dataclass
class AblationResult:
    rows: list
    split_window: int | None
    detections: dict = field(default_factory=dict)
    rules: dict = field(default_factory=dict)


def test_windows(merged: MergedDetections, window_buckets: int, boundary: int | None) -> list[tuple[str, int]]:
    """(entity, window) units with at least one event in the test part."""
    test = select_windows(merged, window_buckets, "test", boundary)
    return [tx.key for tx in build_transactions(test, window_buckets)]


def split_note(boundary: int | None, window_buckets: int, quantum_seconds: int) -> str:
    if boundary is None:
        return "split: none (rules mined and applied on all windows)"
    start = boundary * window_buckets * quantum_seconds
    return f"split: mined on windows < {boundary}, detected on windows >= {boundary} (test starts at ts {start})"


def mine_and_detect(
    merged: MergedDetections,
    labels: LabelFeed,
    config: str,
    params: MiningParams,
    severity: SeverityOrder,
    window_buckets: int,
    boundary: int | None,
) -> tuple[dict[str, GroupRuleSet], list[ThreatDetection]]:
    restricted = filter_modalities(merged, config)
    train = select_windows(restricted, window_buckets, "train", boundary)
    test = select_windows(restricted, window_buckets, "test", boundary)
    rules = mine_group_rules(build_transactions(train, window_buckets), labels, params)
    return rules, detect(test, rules, severity, window_buckets)


def run_ablation(
    merged: MergedDetections,
    labels: LabelFeed,
    configs: Sequence[str] = CONFIGURATIONS,
    params: MiningParams = MiningParams(),
    severity: SeverityOrder = SeverityOrder(),
    window_buckets: int = DEFAULT_WINDOW_BUCKETS,
    split: str = "halves",
    unit: str = "entity",
) -> AblationResult:
    """Re-mine and re-detect with events restricted to each modality configuration.

    All configurations share the mining parameters and the train/test boundary,
    which is computed once on the unrestricted events. ``unit`` is ``entity``
    (default) or ``window``.
    """
    for config in configs:
        if config not in CONFIG_MODALITIES:
            raise ValueError(f"unknown configuration {config!r}")
    if unit not in SCORING_UNITS:
        raise ValueError(f"unknown scoring unit {unit!r}")
    boundary = None if split == "none" else split_window(merged, window_buckets)
    result = AblationResult([], boundary)
    windows = test_windows(merged, window_buckets, boundary)
    per_config = {}
    for config in configs:
        rules, detections = mine_and_detect(merged, labels, config, params, severity, window_buckets, boundary)
        result.rules[config] = rules
        result.detections[config] = detections
        if unit == "entity":
            per_config[config] = score_families(detections, labels)
        else:
            per_config[config] = score_windows(detections, labels, windows)
    result.rows = combine_rows(per_config, labels)
    return result


# --------------------------------------------------------------------------
# reports


def format_table(rows: Sequence[EfficacyRow], configs: Sequence[str], header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    width = max([len("malware")] + [len(r.family) for r in rows])
    top = ("malware".ljust(width) + "".join(f" | {c:^11}" for c in configs)).rstrip()
    sub = " " * width + "".join(" |   pre   rec" for _ in configs)
    lines += [top, sub, "-" * len(sub)]
    for row in rows:
        cells = "".join(
            f" | {fmt(row.scores[c].precision):>5} {fmt(row.scores[c].recall):>5}" for c in configs
        )
        lines.append(row.family.ljust(width) + cells)
    return "\n".join(lines) + "\n"


def format_csv(rows: Sequence[EfficacyRow], configs: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["family", "config", "precision", "recall", "tp", "fp", "fn"])
    for row in rows:
        for config in configs:
            s = row.scores[config]
            writer.writerow([row.family, config, fmt(s.precision, 6), fmt(s.recall, 6), s.tp, s.fp, s.fn])
    return buf.getvalue()


def write_report(out_dir, rows: Sequence[EfficacyRow], configs: Sequence[str], header: Sequence[str] = ()) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "efficacy.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_table(rows, configs, header))
    with open(os.path.join(out_dir, "efficacy.csv"), "w", encoding="utf-8") as fh:
        fh.write(format_csv(rows, configs))
