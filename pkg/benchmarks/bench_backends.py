"""Compare the compiled core against the pure-Python fallback.

Usage: python benchmarks/bench_backends.py [--m 30] [--repeats 3]
"""
import argparse
import time

import numpy as np

from gppde import _backend
from gppde.experiments import elliptic_layout
from gppde.factorization import factorize
from gppde.geometry import maximin_order
from gppde.kernels import MaternKernel
from gppde.linsolve import triangular_solve
from gppde.measurements import order_interior_first


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(m: int):
    kernel = MaternKernel(2.5, 0.3)
    lay = elliptic_layout(m)
    order = order_interior_first(lay)
    pts = np.random.default_rng(0).random((m * m, 2))
    idx = np.arange(min(lay.N, 600))
    U = factorize(kernel, lay.X, lay.coef, order, 3.0).U
    b = np.random.default_rng(1).normal(size=U.shape[0])
    return {
        "maximin": lambda: maximin_order(pts),
        "kernel_block": lambda: kernel.block(lay.X[idx], lay.coef[idx], lay.X[idx], lay.coef[idx], symmetric=True),
        "upper_solve": lambda: (triangular_solve(U, b), triangular_solve(U, b, True)),
        "factorize": lambda: factorize(kernel, lay.X, lay.coef, order, 3.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=30, help="interior grid side")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    backends = _backend.available()
    previous = _backend.name()
    results = {}
    try:
        for name in backends:
            _backend.set_backend(name)
            for task, fn in workloads(args.m).items():
                results[task, name] = best_of(fn, args.repeats)
    finally:
        _backend.set_backend(previous)
    print(f"{'task':<14}" + "".join(f"{n:>12}" for n in backends) + ("     speedup" if len(backends) > 1 else ""))
    for task in ("maximin", "kernel_block", "upper_solve", "factorize"):
        row = f"{task:<14}" + "".join(f"{results[task, n]:>11.4f}s" for n in backends)
        if len(backends) > 1:
            row += f"{results[task, 'python'] / results[task, 'compiled']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
