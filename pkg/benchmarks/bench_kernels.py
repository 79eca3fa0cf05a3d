"""Time the compiled kernels against the numpy fallback on identical inputs.

Run with: python benchmarks/bench_kernels.py [--repeat R]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from hindsum import kernels
from hindsum.nilsystem import AffineTorusSystem, TorusBox, sequence_tables, split_fx


def inputs(P: int):
    sys2 = AffineTorusSystem(2, "sqrt2")
    tab = sequence_tables(sys2, None, "floating", 1, list(range(P)), [1])[:, 0]
    hi, lo = split_fx(tab)
    a_lo, a_len, full = TorusBox.cube(2, 0.4).fx_bounds()
    rng = np.random.default_rng(0)
    mod_table = rng.integers(0, 999_983, size=(P * 2, 3), dtype=np.int64)
    return hi, lo, a_lo, a_len, full, mod_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--P", type=int, default=64, help="number of orbit rows")
    ap.add_argument("--N", type=int, default=100_000, help="steps per row")
    args = ap.parse_args()
    hi, lo, a_lo, a_len, full, mod_table = inputs(args.P)
    c0, c1 = np.zeros(2), np.ones(2)
    cases = {
        "advance_mod": lambda m: m.advance_mod(mod_table, 999_983, args.N),
        "advance_fx": lambda m: m.advance_fx(hi.reshape(-1, 3), lo.reshape(-1, 3), args.N),
        "product_average_fx": lambda m: m.product_average_fx(hi, lo, a_lo, a_len, full, c0, c1, args.N),
    }
    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; P={args.P} N={args.N}")
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {name: min(timeit.repeat(lambda m=m: fn(m), number=1, repeat=args.repeat))
                 for name, m in backends.items()}
        ratio = times["numpy"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<20}" + "".join(f"{t:>11.3f}s" for t in times.values()) + f"{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
