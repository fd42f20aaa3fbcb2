"""File-level pipeline stages shared by the ``run`` command and the subcommands.

Every stage reads its inputs from disk and writes its artifacts to disk, so a
full ``run`` and a chain of individual subcommands produce identical files.
"""
from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .detectors import default_registry
from .errors import ConfigError, StageError, XModalError
from .evaluation import (
    CONFIGURATIONS,
    SCORING_UNITS,
    combine_rows,
    score_families,
    score_windows,
    split_note,
    test_windows,
    write_report,
)
from .framework import read_events_store, write_events_store
from .jsonio import read_json
from .matching import (
    build_entity_map,
    load_inventory,
    merge,
    read_merged,
    write_entity_map,
    write_merged,
)
from .mining import (
    CONFIG_MODALITIES,
    DEFAULT_WINDOW_BUCKETS,
    MiningParams,
    build_transactions,
    filter_modalities,
    load_labels,
    mine_group_rules,
    read_rules,
    select_windows,
    split_window,
    write_rules,
)
from .multimodal import DEFAULT_SEVERITY, SeverityOrder, detect, load_severity, read_detection_rows, write_detections
from .telemetry import DEFAULT_QUANTUM_SECONDS, Modality, load_dataset, write_dataset

log = logging.getLogger(__name__)

STAGES = ("ingest", "events", "match", "mine", "detect", "evaluate")
INPUT_KEYS = ("network_flow", "proxy_log", "endpoint", "labels", "inventory")
ENV_PREFIX = "XMODAL_"


def artifact_name(stem: str, config: str, ext: str) -> str:
    """``rules.json`` for the combined configuration, ``rules.endpoint.json`` otherwise."""
    return f"{stem}.{ext}" if config == "combined" else f"{stem}.{config}.{ext}"


@dataclass
class PipelineConfig:
    inputs: dict
    output_dir: str
    quantum_seconds: int = DEFAULT_QUANTUM_SECONDS
    window_buckets: int = DEFAULT_WINDOW_BUCKETS
    detectors: dict = field(default_factory=dict)
    enabled_detectors: list | None = None
    mining: MiningParams = field(default_factory=MiningParams)
    severity: SeverityOrder = field(default_factory=SeverityOrder)
    split: str = "halves"
    scoring_unit: str = "entity"
    configurations: tuple = CONFIGURATIONS
    stages: tuple = STAGES

    def path(self, *parts) -> str:
        return os.path.join(self.output_dir, *parts)


def _resolve(base: str, value):
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(f"expected a path string, got {value!r}")
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base, value))


def load_pipeline_config(path, env: Mapping[str, str] | None = None) -> PipelineConfig:
    """Read a JSON pipeline config. Relative paths resolve against its directory.

    ``XMODAL_OUTPUT_DIR`` and ``XMODAL_<INPUT>`` (for example
    ``XMODAL_PROXY_LOG``) override the corresponding entries.
    """
    env = os.environ if env is None else env
    try:
        obj = read_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read pipeline config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("pipeline config must be a JSON object")
    known = {
        "inputs", "output_dir", "quantum_seconds", "window_buckets", "detectors", "enabled_detectors",
        "mining", "severity", "split", "scoring_unit", "configurations", "stages",
    }
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {unknown}")
    base = os.path.dirname(os.path.abspath(path))

    raw_inputs = obj.get("inputs", {})
    unknown = sorted(set(raw_inputs) - set(INPUT_KEYS))
    if unknown:
        raise ConfigError(f"unknown inputs: {unknown}")
    inputs = {key: _resolve(base, raw_inputs.get(key)) for key in INPUT_KEYS}
    for key in INPUT_KEYS:
        override = env.get(ENV_PREFIX + key.upper())
        if override:
            inputs[key] = os.path.abspath(override)
    output_dir = env.get(ENV_PREFIX + "OUTPUT_DIR") or _resolve(base, obj.get("output_dir", "out"))

    severity = obj.get("severity")
    if severity is None:
        severity_order = SeverityOrder(DEFAULT_SEVERITY)
    elif isinstance(severity, list):
        severity_order = SeverityOrder(tuple(severity))
    else:
        severity_order = load_severity(_resolve(base, severity))

    try:
        mining = MiningParams(**obj.get("mining", {}))
    except TypeError as exc:
        raise ConfigError(f"bad mining parameters: {exc}") from exc

    configurations = tuple(obj.get("configurations", CONFIGURATIONS))
    for c in configurations:
        if c not in CONFIG_MODALITIES:
            raise ConfigError(f"unknown configuration {c!r}")
    stages = tuple(obj.get("stages", STAGES))
    check_stages(stages)
    split = obj.get("split", "halves")
    if split not in ("halves", "none"):
        raise ConfigError(f"split must be 'halves' or 'none', got {split!r}")
    unit = obj.get("scoring_unit", "entity")
    if unit not in SCORING_UNITS:
        raise ConfigError(f"scoring_unit must be one of {SCORING_UNITS}, got {unit!r}")
    cfg = PipelineConfig(
        inputs=inputs,
        output_dir=output_dir,
        quantum_seconds=_positive_int(obj, "quantum_seconds", DEFAULT_QUANTUM_SECONDS),
        window_buckets=_positive_int(obj, "window_buckets", DEFAULT_WINDOW_BUCKETS),
        detectors=dict(obj.get("detectors", {})),
        enabled_detectors=obj.get("enabled_detectors"),
        mining=mining,
        severity=severity_order,
        split=split,
        scoring_unit=unit,
        configurations=configurations,
        stages=stages,
    )
    # fail on bad detector parameters before any stage runs
    default_registry(cfg.detectors, quantum_seconds=cfg.quantum_seconds, enabled=cfg.enabled_detectors)
    return cfg


def _positive_int(obj, key, default) -> int:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise ConfigError(f"{key} must be a positive integer, got {value!r}")
    return value


def check_stages(stages: Sequence[str]) -> None:
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; choose from {', '.join(STAGES)}")


# --------------------------------------------------------------------------
# stages


def stage_ingest(modality: Modality | str, in_path, out_path) -> int:
    """Validate raw telemetry and write it back in canonical form."""
    ds = load_dataset(modality, in_path)
    write_dataset(ds, out_path)
    log.info("ingest %s: %d records, %d malformed, %d duplicates",
             ds.modality.value, len(ds.records), ds.malformed_count, ds.duplicate_count)
    return len(ds.records)


def stage_events(
    paths: Mapping[Modality, str],
    out_path,
    detectors: Mapping | None = None,
    quantum_seconds: int = DEFAULT_QUANTUM_SECONDS,
    enabled: Sequence[str] | None = None,
) -> int:
    registry = default_registry(detectors, quantum_seconds=quantum_seconds, enabled=enabled)
    needed = registry.modalities()
    missing = sorted(m.value for m in needed if not paths.get(m))
    if missing:
        raise ConfigError(f"no telemetry given for modalities: {', '.join(missing)}")
    datasets = {m: load_dataset(m, paths[m]) for m in needed}
    sets = registry.run_all(datasets)
    write_events_store(out_path, sets)
    return sum(len(s) for s in sets)


def stage_match(endpoint_path, out_map, quantum_seconds=DEFAULT_QUANTUM_SECONDS, inventory_path=None,
                events_path=None, merged_out=None) -> None:
    inventory = load_inventory(inventory_path) if inventory_path else []
    entity_map = build_entity_map(load_dataset(Modality.ENDPOINT, endpoint_path), quantum_seconds, inventory)
    write_entity_map(out_map, entity_map)
    if events_path and merged_out:
        merged = merge(read_events_store(events_path), entity_map)
        write_merged(merged_out, merged)
        log.info("match: %d attributed, %d unresolved", merged.attributed_count, len(merged.unresolved))


def _split(merged, window_buckets: int, part: str):
    return select_windows(merged, window_buckets, part, split_window(merged, window_buckets))


def stage_mine(merged_path, labels_path, out_path, config="combined", part="train",
               params: MiningParams = MiningParams(), window_buckets=DEFAULT_WINDOW_BUCKETS) -> int:
    merged = read_merged(merged_path)
    train = filter_modalities(_split(merged, window_buckets, part), config)
    rules = mine_group_rules(build_transactions(train, window_buckets), load_labels(labels_path), params)
    write_rules(out_path, rules, params)
    return sum(len(rs.rules) for rs in rules.values())


def stage_detect(merged_path, rules_path, out_path, config="combined", part="test",
                 severity: SeverityOrder = SeverityOrder(), window_buckets=DEFAULT_WINDOW_BUCKETS) -> int:
    merged = read_merged(merged_path)
    test = filter_modalities(_split(merged, window_buckets, part), config)
    detections = detect(test, read_rules(rules_path), severity, window_buckets)
    write_detections(out_path, detections)
    return len(detections)


def stage_evaluate(detection_paths: Mapping[str, str], labels_path, out_dir, merged_path=None, split="halves",
                   unit="entity", window_buckets=DEFAULT_WINDOW_BUCKETS) -> list:
    """Write the efficacy report. ``merged_path`` lets the header record the split
    and is required for per-window scoring."""
    if unit not in SCORING_UNITS:
        raise ConfigError(f"unknown scoring unit {unit!r}")
    if unit == "window" and not merged_path:
        raise ConfigError("per-window scoring needs the merged detections")
    truth = load_labels(labels_path)
    configs = list(detection_paths)
    header = [f"scored per {unit} over {len(truth)} labelled entities", f"configurations: {', '.join(configs)}"]
    windows = []
    if merged_path:
        merged = read_merged(merged_path)
        boundary = split_window(merged, window_buckets) if split == "halves" else None
        header.append(split_note(boundary, window_buckets, merged.quantum_seconds))
        windows = test_windows(merged, window_buckets, boundary)
    else:
        header.append("split: not recorded")
    per_config = {}
    for config, path in detection_paths.items():
        rows = read_detection_rows(path)
        if unit == "entity":
            per_config[config] = score_families(rows, truth)
        else:
            per_config[config] = score_windows(rows, truth, windows)
    rows = combine_rows(per_config, truth)
    write_report(out_dir, rows, configs, header)
    return rows


@contextmanager
def _stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except (XModalError, OSError, ValueError) as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str] | None = None) -> None:
    stages = tuple(cfg.stages if stages is None else stages)
    check_stages(stages)
    os.makedirs(cfg.path("ingest"), exist_ok=True)
    ingested = {m: cfg.path("ingest", f"{m.value}.jsonl") for m in Modality}
    events = cfg.path("events.jsonl")
    merged = cfg.path("merged.json")
    part_train = "train" if cfg.split == "halves" else "all"
    part_test = "test" if cfg.split == "halves" else "all"

    if "ingest" in stages:
        with _stage("ingest"):
            for m in Modality:
                src = cfg.inputs.get(m.value)
                if src:
                    stage_ingest(m, src, ingested[m])
    if "events" in stages:
        with _stage("events"):
            paths = {m: p for m, p in ingested.items() if os.path.exists(p)}
            stage_events(paths, events, cfg.detectors, cfg.quantum_seconds, cfg.enabled_detectors)
    if "match" in stages:
        with _stage("match"):
            have_events = os.path.exists(events)
            stage_match(ingested[Modality.ENDPOINT], cfg.path("entity_map.json"), cfg.quantum_seconds,
                        cfg.inputs.get("inventory"), events if have_events else None, merged if have_events else None)
    labels = cfg.inputs.get("labels")
    for config in cfg.configurations:
        rules = cfg.path(artifact_name("rules", config, "json"))
        detections = cfg.path(artifact_name("detections", config, "jsonl"))
        if "mine" in stages:
            with _stage("mine"):
                if not labels:
                    raise ConfigError("mining needs inputs.labels")
                stage_mine(merged, labels, rules, config, part_train, cfg.mining, cfg.window_buckets)
        if "detect" in stages:
            with _stage("detect"):
                stage_detect(merged, rules, detections, config, part_test, cfg.severity, cfg.window_buckets)
    if "evaluate" in stages:
        with _stage("evaluate"):
            if not labels:
                raise ConfigError("evaluation needs inputs.labels")
            stage_evaluate(
                {c: cfg.path(artifact_name("detections", c, "jsonl")) for c in cfg.configurations},
                labels,
                cfg.path("report"),
                merged,
                cfg.split,
                cfg.scoring_unit,
                cfg.window_buckets,
            )
