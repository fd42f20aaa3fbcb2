"""Canonical JSON helpers so every artifact is byte-reproducible."""
from __future__ import annotations

import json
import math
from typing import Any, Iterable, Iterator

FLOAT_DIGITS = 6


def _normalize(obj: Any) -> Any:
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        return round(obj, FLOAT_DIGITS)
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_normalize(v) for v in obj)
    return obj


def dumps(obj: Any, indent: int | None = None) -> str:
    """Sorted keys, fixed float rounding, NaN rendered as null."""
    if indent is None:
        return json.dumps(_normalize(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return json.dumps(_normalize(obj), sort_keys=True, indent=indent, allow_nan=False)


def write_json(path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj, indent=1))
        fh.write("\n")


def read_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path, rows: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")


def read_jsonl(path) -> Iterator[Any]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
