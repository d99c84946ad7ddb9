"""Benchmark the compiled kernels against the NumPy fallback.

Times the two hot kernels (split scan, DFT) in isolation and an end-to-end
forest training that exercises the split scan through the real call path.

Usage: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from ontask import kernels
from ontask.forest import Dataset, TrainConfig, train_forest
from ontask.kernels import available_backends


def time_call(fn, *args, reps: int = 5, inner: int = 1) -> float:
    """Best-of-reps wall time per call, in seconds."""
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def bench_dft(backends) -> list[tuple[str, dict[str, float]]]:
    rows = []
    rng = np.random.default_rng(0)
    for n in (16, 120, 128, 512):
        x = rng.standard_normal(n)
        timings = {
            name: time_call(mod.dft_onesided, x, inner=max(1, 2000 // n))
            for name, mod in backends.items()
        }
        rows.append((f"dft n={n}", timings))
    return rows


def bench_split(backends) -> list[tuple[str, dict[str, float]]]:
    rows = []
    rng = np.random.default_rng(1)
    for n, m in ((200, 18), (2000, 18), (2000, 48)):
        x = rng.standard_normal((n, m))
        y = rng.integers(0, 2, n).astype(np.int64)
        w = np.ones(n)
        timings = {
            name: time_call(mod.best_split_scan, x, y, w, 5.0)
            for name, mod in backends.items()
        }
        rows.append((f"split n={n} m={m}", timings))
    return rows


def bench_training(backends) -> list[tuple[str, dict[str, float]]]:
    rng = np.random.default_rng(2)
    n, d = 1500, 40
    labels = rng.integers(0, 2, n)
    x = rng.standard_normal((n, d))
    x[:, :5] += np.where(labels == 1, 1.0, -1.0)[:, None]
    dataset = Dataset(
        features=x,
        labels=labels,
        feature_names=tuple(f"f{i}" for i in range(d)),
        group_ids=tuple("s" for _ in range(n)),
    )
    cfg = TrainConfig(n_trees=30, seed=0)

    timings = {}
    original = kernels.best_split_scan
    try:
        for name, mod in backends.items():
            kernels.best_split_scan = mod.best_split_scan
            timings[name] = time_call(train_forest, dataset, cfg, reps=3)
    finally:
        kernels.best_split_scan = original
    return [(f"train_forest n={n} d={d} trees=30", timings)]


def main() -> None:
    backends = available_backends()
    print(f"active backend: {kernels.get_backend()}")
    print(f"available: {', '.join(sorted(backends))}")
    if "cython" not in backends:
        print("compiled kernels not built; timing the fallback only")
    print()

    rows = bench_dft(backends) + bench_split(backends) + bench_training(backends)
    names = sorted(backends)
    header = ["benchmark"] + [f"{n} (ms)" for n in names]
    if len(names) == 2:
        header.append("speedup")
    table = []
    for label, timings in rows:
        cells = [label] + [f"{timings[n] * 1000:.3f}" for n in names]
        if len(names) == 2:
            cells.append(f"{timings['python'] / timings['cython']:.1f}x")
        table.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in table)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    print("  ".join("-" * w for w in widths))
    for row in table:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


if __name__ == "__main__":
    main()
