"""Compare the compiled and pure-numpy kernel backends on the default mission grid.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--n-buffer 40]

Prints the median wall time per call of each hot kernel for both backends,
the speedup, and the largest absolute difference between their outputs.
"""

import argparse
import statistics
import time

import numpy as np

from kbcover import _kernels_py
from kbcover.field import MissionGrid

try:
    from kbcover import _kernels as _compiled
except ImportError:
    _compiled = None


def _time(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return statistics.median(ts)


def _maxdiff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))) for x, y in zip(a, b))


def cases(n_buffer, rng):
    grid = MissionGrid()
    Q = grid.centers()
    Z = np.column_stack([rng.uniform(-1.41, 2.38, n_buffer), rng.uniform(-1.26, 1.53, n_buffer), np.repeat(np.arange(10.0), n_buffer // 10 + 1)[:n_buffer]])
    lam = rng.normal(size=(Q.shape[0], n_buffer))
    Alam = rng.normal(size=lam.shape)
    Ks = rng.uniform(size=lam.shape)
    Y = rng.uniform(size=n_buffer)
    agents = rng.uniform(-1, 1, size=(4, 2))
    hprime = rng.uniform(0, 2, Q.shape[0]) * (rng.uniform(size=Q.shape[0]) < 0.7)
    phi = rng.uniform(size=Q.shape[0])
    return {
        "cross_kernel": ("cross_kernel", (Q, 10.0, Z, 0.5, 10.0)),
        "objective_rows": ("objective_rows", (lam, Alam, Ks, Y)),
        "measurement_field": ("measurement_field", (Q, agents, 0.3, 0.5)),
        "disk_moments": ("disk_moments", (Q, np.array([0.3, 0.1]), hprime, phi, 0.3, 0.5)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--n-buffer", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':18s} {'numpy ms':>9s} {'cython ms':>9s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, (fn, argv) in cases(args.n_buffer, rng).items():
        t_py = _time(lambda: getattr(_kernels_py, fn)(*argv), args.repeat)
        if _compiled is None:
            print(f"{name:18s} {1e3 * t_py:9.3f} {'-':>9s} {'-':>8s} {'-':>11s}")
            continue
        t_cy = _time(lambda: getattr(_compiled, fn)(*argv), args.repeat)
        diff = _maxdiff(getattr(_kernels_py, fn)(*argv), getattr(_compiled, fn)(*argv))
        print(f"{name:18s} {1e3 * t_py:9.3f} {1e3 * t_cy:9.3f} {t_py / t_cy:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
