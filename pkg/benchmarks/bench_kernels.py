"""Compare the compiled split-search kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--rows 20000] [--features 40]

Times best_split_logistic and best_split_gini on identical inputs for
both backends and checks the results agree bit-for-bit.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from shiftlens.kernels import _pykernels
from shiftlens.treebase import build_orders

try:
    from shiftlens.kernels import _ckernels
except ImportError:
    _ckernels = None


def _inputs(rows: int, features: int, seed: int):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.normal(size=(rows, features)))
    X[rng.random(X.shape) < 0.05] = np.nan
    order = build_orders(X)
    p = rng.uniform(0.05, 0.95, rows)
    y = (rng.random(rows) < p).astype(np.float64)
    g = p - y
    h = p * (1.0 - p)
    w0 = np.where(y == 0.0, rng.uniform(0.1, 2.0, rows), 0.0)
    w1 = np.where(y == 1.0, rng.uniform(0.1, 2.0, rows), 0.0)
    return X, order, g, h, w0, w1


def _time(fn, *args, repeats: int = 5):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--features", type=int, default=40)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    X, order, g, h, w0, w1 = _inputs(args.rows, args.features, args.seed)
    print(f"rows={args.rows} features={args.features}")

    t_py, r_py = _time(_pykernels.best_split_logistic, X, order, g, h, 1.0, 1.0)
    print(f"logistic split  numpy    {t_py * 1e3:8.2f} ms  -> {r_py}")
    if _ckernels is not None:
        t_c, r_c = _time(_ckernels.best_split_logistic, X, order, g, h, 1.0, 1.0)
        print(f"logistic split  compiled {t_c * 1e3:8.2f} ms  -> {r_c}  "
              f"speedup x{t_py / t_c:.1f}")
        assert r_py == r_c, "backend results diverge"

    t_py, r_py = _time(_pykernels.best_split_gini, X, order, w0, w1, 0.0)
    print(f"gini split      numpy    {t_py * 1e3:8.2f} ms  -> {r_py}")
    if _ckernels is not None:
        t_c, r_c = _time(_ckernels.best_split_gini, X, order, w0, w1, 0.0)
        print(f"gini split      compiled {t_c * 1e3:8.2f} ms  -> {r_c}  "
              f"speedup x{t_py / t_c:.1f}")
        assert r_py == r_c, "backend results diverge"
    if _ckernels is None:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
