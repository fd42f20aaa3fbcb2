"""Multi-modal security detection over network flow, proxy and endpoint telemetry."""
from .telemetry import Dataset, Modality, load_dataset, parse_dataset
from .framework import DetectorRegistry, Event, UnimodalDetection
from .detectors import default_registry
from .matching import build_entity_map, merge
from .mining import MiningParams, fp_growth, mine_group_rules
from .multimodal import SeverityOrder, classify, detect
from .evaluation import run_ablation

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DetectorRegistry",
    "Event",
    "MiningParams",
    "Modality",
    "SeverityOrder",
    "UnimodalDetection",
    "build_entity_map",
    "classify",
    "default_registry",
    "detect",
    "fp_growth",
    "load_dataset",
    "merge",
    "mine_group_rules",
    "parse_dataset",
    "run_ablation",
]
