"""Times the numba and numpy paths of the hot kernels on the same inputs.

    python benchmarks/bench_kernels.py [--rows 20000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from relevance_forge import _accel
from relevance_forge._accel import pool_hashed, sweep_per_query


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    length = 64
    ids = rng.integers(0, 30000, (args.rows, length))
    lens = rng.integers(5, length + 1, args.rows)
    mask = (np.arange(length)[None, :] < lens[:, None]).astype(np.int64)
    segments = ((np.arange(length)[None, :] >= (lens // 3)[:, None]) & (mask == 1)).astype(np.int64)
    table = rng.standard_normal((4096, 64))

    n = args.rows // 10
    scores = rng.random(n)
    labels = rng.random(n) < 0.3
    qidx = rng.integers(0, 50, n)
    thresholds = np.unique(np.concatenate([[0.0], scores, [1.0]]))[:: max(1, n // 500)]

    kernels = {
        "pool_hashed": lambda numba: pool_hashed(ids, mask, segments, table, 7, use_numba=numba),
        "sweep_per_query": lambda numba: sweep_per_query(scores, labels, qidx, 50, thresholds, use_numba=numba),
    }
    print(f"kernel\tpath\tseconds\trows={args.rows}")
    for name, run in kernels.items():
        t_np = best_of(lambda: run(False), args.repeat)
        print(f"{name}\tnumpy\t{t_np:.4f}")
        if _accel.NUMBA_AVAILABLE:
            run(True)  # compile outside the timing
            t_nb = best_of(lambda: run(True), args.repeat)
            print(f"{name}\tnumba\t{t_nb:.4f}\tspeedup\t{t_np / t_nb:.1f}x")
            diff = np.max(np.abs(run(True) - run(False)))
            print(f"{name}\tmax_abs_diff\t{diff:.2e}")


if __name__ == "__main__":
    main()
