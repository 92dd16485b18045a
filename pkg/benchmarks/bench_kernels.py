#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Run after building the extension (python setup.py build_ext --inplace):

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints a table of best-of-N wall times per kernel and the speedup. The same
workloads the package actually runs: probit on sampler-sized batches, pooled
W1 on eval-sized sample pairs, KDE curves at the default grid, bandwidth
window counts, and flow-layer inversion at eval sampling size.
"""

import argparse
import time

import numpy as np

from densbench._kernels import available_backends


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(rng):
    ps = rng.uniform(1e-12, 1 - 1e-12, 1_000_000)
    x = np.sort(rng.normal(0.0, 1.0, 100_000))
    y = np.sort(rng.normal(0.3, 1.2, 100_000))
    samples = rng.normal(5.0, 0.3, 100_000)
    sorted_samples = np.sort(samples)
    grid = np.linspace(3.0, 7.0, 512)
    weights = np.full(32, 1 / 32)
    locs = np.linspace(-2.2, 2.2, 32)
    scales = np.full(32, 0.14)
    z = rng.normal(0.0, 1.0, 100_000)
    return [
        ("probit 1e6", lambda k: k.probit(ps)),
        ("w1_pooled 1e5 vs 1e5", lambda k: k.w1_pooled(x, y)),
        ("kde_gauss 1e5 x 512", lambda k: k.kde_gauss(samples, 0.003, grid)),
        ("window_count_mean 1e5", lambda k: k.window_count_mean(sorted_samples, 0.003)),
        ("logistic_mixture_cdf 1e5 x K32", lambda k: k.logistic_mixture_cdf(z, weights, locs, scales)),
        ("gf_invert_layer 1e5 x K32", lambda k: k.gf_invert_layer(np.clip(z, -4, 4), weights, locs, scales, 1e-15)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; showing pure-python times only")
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in workloads(rng):
        times = {bk: timeit(lambda k=mod: fn(k), args.repeat)
                 for bk, mod in backends.items()}
        rows.append((name, times))

    width = max(len(r[0]) for r in rows)
    header = f"{'kernel'.ljust(width)}  python[s]   compiled[s]  speedup"
    print(header)
    print("-" * len(header))
    for name, times in rows:
        py = times.get("python")
        cy = times.get("compiled")
        if cy is not None:
            print(f"{name.ljust(width)}  {py:9.4f}   {cy:9.4f}    {py / cy:6.1f}x")
        else:
            print(f"{name.ljust(width)}  {py:9.4f}   {'-':>9}    {'-':>6}")


if __name__ == "__main__":
    main()
