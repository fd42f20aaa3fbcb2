"""Backend selection for the support-counting kernels.

The compiled extension is used when it was built and ``XMODAL_PURE_PYTHON``
is unset; otherwise the pure-Python implementation is used. Both accept
itemsets as Python-int bitmasks and return plain lists.
"""
from __future__ import annotations

import os
from typing import Sequence

from . import _pykernels

_WORD = 64
_WORD_MASK = (1 << _WORD) - 1

try:
    if os.environ.get("XMODAL_PURE_PYTHON"):
        raise ImportError("pure-Python kernels forced by XMODAL_PURE_PYTHON")
    import numpy as np

    from . import _ckernels
except ImportError:
    _ckernels = None
    BACKEND = "python"
else:
    BACKEND = "cython"


def available_backends() -> list[str]:
    return ["python", "cython"] if _ckernels is not None else ["python"]


def pack(masks: Sequence[int], n_bits: int):
    """Bitmasks as a C-contiguous (len(masks), words) uint64 array."""
    words = max(1, -(-n_bits // _WORD))
    out = np.zeros((len(masks), words), dtype=np.uint64)
    for i, mask in enumerate(masks):
        k = 0
        while mask:
            out[i, k] = mask & _WORD_MASK
            mask >>= _WORD
            k += 1
    return out


def _require(backend: str) -> None:
    if backend not in ("python", "cython"):
        raise ValueError(f"unknown kernel backend {backend!r}")
    if backend == "cython" and _ckernels is None:
        raise RuntimeError("compiled kernels are not available in this build")


def _width(n_bits: int, *mask_lists) -> int:
    widest = max((m.bit_length() for masks in mask_lists for m in masks), default=0)
    return max(n_bits, widest)


def support_counts(
    transactions: Sequence[int], candidates: Sequence[int], n_bits: int = 0, backend: str | None = None
) -> list[int]:
    backend = backend or BACKEND
    _require(backend)
    if backend == "python" or not candidates:
        return _pykernels.support_counts(transactions, candidates)
    bits = _width(n_bits, transactions, candidates)
    out = _ckernels.support_counts(pack(transactions, bits), pack(candidates, bits))
    return out.tolist()


def match_counts(
    itemsets: Sequence[int],
    rules: Sequence[int],
    rule_groups: Sequence[int],
    n_groups: int,
    n_bits: int = 0,
    backend: str | None = None,
) -> list[list[int]]:
    backend = backend or BACKEND
    _require(backend)
    if backend == "python" or not rules or not itemsets:
        return _pykernels.match_counts(itemsets, rules, rule_groups, n_groups)
    bits = _width(n_bits, itemsets, rules)
    groups = np.asarray(rule_groups, dtype=np.int64)
    out = _ckernels.match_counts(pack(itemsets, bits), pack(rules, bits), groups, n_groups)
    return out.tolist()
