"""Command-line entry point (``xmodal``).

Exit codes: 0 success, 1 runtime failure (bad data, detector contract
violations), 2 usage or configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .detectors import default_registry
from .errors import ConfigError, StageError, ValidationError, XModalError
from .jsonio import dumps, read_json
from .mining import CONFIG_MODALITIES, DEFAULT_WINDOW_BUCKETS, MiningParams
from .multimodal import DEFAULT_SEVERITY, SeverityOrder, load_severity
from .pipeline import (
    STAGES,
    load_pipeline_config,
    run_pipeline,
    stage_detect,
    stage_evaluate,
    stage_events,
    stage_ingest,
    stage_match,
    stage_mine,
)
from .simgen import default_config, generate, load_sim_config
from .telemetry import DEFAULT_QUANTUM_SECONDS, Modality

log = logging.getLogger("xmodal")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _config_obj(path):
    if not path:
        return {}
    try:
        obj = read_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return obj


def cmd_simulate(args) -> int:
    cfg = load_sim_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.seed = args.seed
    out = generate(cfg)
    out.write(args.out_dir)
    sizes = ", ".join(f"{m.value}={len(ds.records)}" for m, ds in out.datasets.items())
    log.info("simulated %d entities over %d days: %s", cfg.n_entities, cfg.days, sizes)
    return EXIT_OK


def cmd_ingest(args) -> int:
    stage_ingest(args.modality, args.inp, args.out)
    return EXIT_OK


def cmd_events(args) -> int:
    obj = _config_obj(args.config)
    quantum = obj.get("quantum_seconds", DEFAULT_QUANTUM_SECONDS)
    if args.list:
        registry = default_registry(obj.get("detectors"), quantum_seconds=quantum, enabled=obj.get("enabled_detectors"))
        print(dumps(registry.dictionary_json(), indent=1))
        return EXIT_OK
    if not args.out:
        raise ConfigError("events: --out is required unless --list is given")
    paths = {Modality.NETWORK_FLOW: args.network_flow, Modality.PROXY_LOG: args.proxy_log, Modality.ENDPOINT: args.endpoint}
    stage_events(paths, args.out, obj.get("detectors"), quantum, obj.get("enabled_detectors"))
    return EXIT_OK


def cmd_match(args) -> int:
    if bool(args.events) != bool(args.merged_out):
        raise ConfigError("match: --events and --merged-out go together")
    stage_match(args.endpoint, args.out, args.quantum, args.inventory, args.events, args.merged_out)
    return EXIT_OK


def cmd_mine(args) -> int:
    obj = _config_obj(args.config)
    try:
        params = MiningParams(**obj.get("mining", {}))
    except TypeError as exc:
        raise ConfigError(f"bad mining parameters: {exc}") from exc
    n = stage_mine(args.merged, args.labels, args.out, args.modalities, args.split, params, args.window_buckets)
    log.info("mine: %d rules", n)
    return EXIT_OK


def cmd_detect(args) -> int:
    severity = load_severity(args.severity) if args.severity else SeverityOrder(DEFAULT_SEVERITY)
    n = stage_detect(args.merged, args.rules, args.out, args.modalities, args.split, severity, args.window_buckets)
    log.info("detect: %d threat detections", n)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    paths = {}
    for spec in args.detections:
        config, sep, path = spec.partition("=")
        if not sep or config not in CONFIG_MODALITIES or not path:
            raise ConfigError(f"--detections expects CONFIG=PATH with CONFIG in {sorted(CONFIG_MODALITIES)}, got {spec!r}")
        paths[config] = path
    stage_evaluate(paths, args.truth, args.out, args.merged, args.split, args.unit, args.window_buckets)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_pipeline_config(args.config)
    stages = args.stages.split(",") if args.stages else None
    run_pipeline(cfg, stages)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmodal", description="Multi-modal security detection pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate synthetic telemetry and labels")
    p.add_argument("--config", help="simulation config (JSON); defaults to the built-in scenario mix")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="validate and canonicalise one telemetry file")
    p.add_argument("--modality", required=True, choices=[m.value for m in Modality])
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("events", help="run unimodal detectors into an events store")
    p.add_argument("--list", action="store_true", help="print the event dictionary and exit")
    p.add_argument("--network-flow")
    p.add_argument("--proxy-log")
    p.add_argument("--endpoint")
    p.add_argument("--config", help="pipeline config holding detector parameters")
    p.add_argument("--out")
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("match", help="build the IP to endpoint map and merge events")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--inventory")
    p.add_argument("--quantum", type=int, default=DEFAULT_QUANTUM_SECONDS)
    p.add_argument("--out", required=True, help="entity map output")
    p.add_argument("--events", help="events store to merge")
    p.add_argument("--merged-out")
    p.set_defaults(func=cmd_match)

    modalities = sorted(CONFIG_MODALITIES)
    p = sub.add_parser("mine", help="mine group-discriminative rules")
    p.add_argument("--merged", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--modalities", default="combined", choices=modalities)
    p.add_argument("--split", default="train", choices=["train", "all"])
    p.add_argument("--window-buckets", type=int, default=DEFAULT_WINDOW_BUCKETS)
    p.add_argument("--config", help="pipeline config holding mining parameters")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("detect", help="apply rules to merged events")
    p.add_argument("--merged", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--severity")
    p.add_argument("--out", required=True)
    p.add_argument("--modalities", default="combined", choices=modalities)
    p.add_argument("--split", default="test", choices=["test", "all"])
    p.add_argument("--window-buckets", type=int, default=DEFAULT_WINDOW_BUCKETS)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="per-family precision and recall report")
    p.add_argument("--detections", nargs="+", required=True, metavar="CONFIG=PATH")
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merged", help="merged detections; records the split in the header")
    p.add_argument("--split", default="halves", choices=["halves", "none"])
    p.add_argument("--unit", default="entity", choices=["entity", "window"])
    p.add_argument("--window-buckets", type=int, default=DEFAULT_WINDOW_BUCKETS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run the configured pipeline stages")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except StageError as exc:
        print(f"xmodal: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, (ConfigError, ValidationError)) else EXIT_FAILURE
    except (ConfigError, ValidationError) as exc:
        print(f"xmodal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (XModalError, OSError, ValueError) as exc:
        print(f"xmodal: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
