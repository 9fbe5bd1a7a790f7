"""Compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--nodes 5368] [--repeat 200]

Prints per-call timings for both backends, the speedup, and the largest
difference between their results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from klausmeier_pulses import kernels


def _case(n, rng):
    x = np.linspace(0.0, 10.0, n)
    U = 0.5 + 0.1 * rng.random(n)
    V = 30.0 * np.exp(-((x - 5.0) / 0.02) ** 2)
    hx = np.ones(n)
    hxx = np.zeros(n)
    sub = -np.ones(n)
    sup = -np.ones(n)
    diag = 2.5 + rng.random(n)
    rhs = rng.standard_normal(n)
    return dict(U=U, V=V, hx=hx, hxx=hxx, sub=sub, sup=sup, diag=diag, rhs=rhs, dx=x[1] - x[0])


def _calls(impl, c):
    return {
        "tridiag_solve": lambda: impl.tridiag_solve(c["sub"], c["diag"], c["sup"], c["rhs"]),
        "cyclic_solve": lambda: impl.cyclic_solve(c["sub"], c["diag"].copy(), c["sup"], c["rhs"]),
        "imex_step": lambda: impl.imex_step(c["U"], c["U"], c["V"], c["V"], c["hx"], c["hxx"], 0.5, 0.1,
                                            c["dx"], 0.45, 0.01, False, False)[0],
    }


def _time(fn, repeat):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=5368)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    c = _case(args.nodes, np.random.default_rng(args.seed))
    py = _calls(kernels.get_backend("python"), c)
    try:
        comp = _calls(kernels.get_backend("compiled"), c)
    except ImportError:
        print("compiled kernels unavailable; only the fallback was timed")
        comp = None
    print(f"{'kernel':<16}{'python [us]':>14}{'compiled [us]':>16}{'speedup':>10}{'max diff':>12}")
    for name, fn in py.items():
        tp = _time(fn, args.repeat)
        if comp is None:
            print(f"{name:<16}{tp * 1e6:>14.1f}")
            continue
        tc = _time(comp[name], args.repeat)
        diff = float(np.max(np.abs(np.asarray(fn()) - np.asarray(comp[name]()))))
        print(f"{name:<16}{tp * 1e6:>14.1f}{tc * 1e6:>16.1f}{tp / tc:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
