"""Pure-Python support-counting kernels (reference and fallback).

Itemsets are bitmasks held in Python ints, so there is no width limit.
"""
from __future__ import annotations

from typing import Sequence


def support_counts(transactions: Sequence[int], candidates: Sequence[int], n_bits: int = 0) -> list[int]:
    """Number of transactions containing each candidate itemset."""
    out = []
    for cand in candidates:
        n = 0
        for tx in transactions:
            if tx & cand == cand:
                n += 1
        out.append(n)
    return out


def match_counts(
    itemsets: Sequence[int],
    rules: Sequence[int],
    rule_groups: Sequence[int],
    n_groups: int,
    n_bits: int = 0,
) -> list[list[int]]:
    """Per itemset, per group: number of rules of the group contained in it."""
    out = []
    for items in itemsets:
        row = [0] * n_groups
        for rule, group in zip(rules, rule_groups):
            if items & rule == rule:
                row[group] += 1
        out.append(row)
    return out
