#!/usr/bin/env python3
"""Benchmark the compiled matching kernels against the numpy/scipy fallback.

Times the assignment solver and the pairwise cost kernel at matching-relevant
sizes, plus a full flatness-index evaluation of one synthetic checkpoint.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from das.backend import available_backends, get_backend
from das.matching import fis
from das.synth import SyntheticConfig, generate_run

LSAP_SIZES = [(10, 10), (50, 50), (100, 100), (200, 200), (60, 120)]
COST_SIZES = [(20, 20, 8), (100, 100, 20), (200, 200, 20)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_lsap(backend, rng, repeat):
    rows = []
    for nr, nc in LSAP_SIZES:
        cost = rng.normal(0, 5, (nr, nc))
        rows.append((f"lsap {nr}x{nc}", best_of(lambda: backend.lsap(cost), repeat)))
    return rows


def bench_cost(backend, rng, repeat):
    rows = []
    for n, m, k in COST_SIZES:
        pa = rng.dirichlet(np.ones(k), n)
        qb = rng.dirichlet(np.ones(k), m)
        ba = np.hstack([rng.uniform(0, 500, (n, 2)),
                        rng.uniform(500, 900, (n, 2))])
        bb = np.hstack([rng.uniform(0, 500, (m, 2)),
                        rng.uniform(500, 900, (m, 2))])
        rows.append((f"cost {n}x{m} (K={k})",
                     best_of(lambda: backend.match_cost_matrix(pa, ba, qb, bb),
                             repeat)))
    return rows


def bench_fis(backend, ckpt, repeat):
    return [("fis (200 img, ~60 det/img)",
             best_of(lambda: fis(ckpt, kernels=backend), max(1, repeat // 2)))]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5,
                        help="best-of repetitions per measurement")
    args = parser.parse_args()

    backends = available_backends()
    print(f"available backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("note: compiled extension missing; timing the fallback only")

    config = SyntheticConfig(images_per_domain=200, trajectory_length=1,
                             num_classes=8, feature_dim=64,
                             objects_per_image=(40, 60),
                             sharpness_start=5.0, sharpness_end=5.0, seed=0)
    ckpt = generate_run(config).manifest.checkpoints[0]

    results = {}
    for name in backends:
        backend = get_backend(name)
        rng = np.random.default_rng(0)
        rows = (bench_lsap(backend, rng, args.repeat)
                + bench_cost(backend, rng, args.repeat)
                + bench_fis(backend, ckpt, args.repeat))
        results[name] = dict(rows)

    labels = list(next(iter(results.values())))
    width = max(len(label) for label in labels)
    header = f"{'benchmark'.ljust(width)}  " + "  ".join(
        f"{name:>12}" for name in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print()
    print(header)
    print("-" * len(header))
    for label in labels:
        cells = [f"{results[name][label] * 1e3:9.3f} ms" for name in backends]
        line = f"{label.ljust(width)}  " + "  ".join(cells)
        if len(backends) == 2:
            ratio = results["fallback"][label] / results["compiled"][label]
            line += f"  {ratio:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
