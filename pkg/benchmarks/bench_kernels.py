"""Compare the compiled and pure-Python support-counting kernels.

    python3 benchmarks/bench_kernels.py --transactions 20000 --candidates 500
"""
from __future__ import annotations

import argparse
import random
import time

from xmodal import kernels


def random_masks(rng: random.Random, n: int, n_bits: int, density: float) -> list[int]:
    out = []
    for _ in range(n):
        mask = 0
        for b in range(n_bits):
            if rng.random() < density:
                mask |= 1 << b
        out.append(mask)
    return out


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--transactions", type=int, default=20000)
    ap.add_argument("--candidates", type=int, default=500)
    ap.add_argument("--bits", type=int, default=40)
    ap.add_argument("--groups", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = random.Random(args.seed)
    tx = random_masks(rng, args.transactions, args.bits, 0.3)
    cands = random_masks(rng, args.candidates, args.bits, 0.06)
    groups = [rng.randrange(args.groups) for _ in cands]
    print(f"{args.transactions} transactions x {args.candidates} candidates, {args.bits} items")
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the Python backend is timed")

    results = {}
    for backend in backends:
        sup = best_of(lambda: kernels.support_counts(tx, cands, args.bits, backend=backend), args.repeat)
        match = best_of(
            lambda: kernels.match_counts(tx, cands, groups, args.groups, args.bits, backend=backend), args.repeat
        )
        results[backend] = (sup, match)
        print(f"{backend:>7}: support_counts {sup * 1e3:9.1f} ms   match_counts {match * 1e3:9.1f} ms")
    if len(results) == 2:
        assert kernels.support_counts(tx, cands, args.bits, backend="python") == kernels.support_counts(
            tx, cands, args.bits, backend="cython"
        )
        (ps, pm), (cs, cm) = results["python"], results["cython"]
        print(f"speedup: support_counts x{ps / cs:.1f}   match_counts x{pm / cm:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
