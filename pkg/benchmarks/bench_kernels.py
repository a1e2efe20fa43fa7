"""Compare the compiled and pure-Python shooting kernels.

Usage::

    python benchmarks/bench_kernels.py [--lam 1e4] [--repeat 3]

Both kernels integrate a left shot across the seeded two-mass instance;
the script checks that they agree bit for bit and prints timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rodchain import kernels
from rodchain.instances import polynomial_instance
from rodchain.shooting import DEFAULT_RTOL, _initial_step, kscale


def shot(propagate, config, lam: float, rtol: float = DEFAULT_RTOL):
    """Left shot using the given kernel; returns terminal state and steps."""
    v, f, ls, steps = 0.0, 1.0, 0.0, 0
    empty = np.empty(0)
    for j, rod in enumerate(config.rods):
        if j > 0:
            f = f - config.masses[j - 1] * lam * v
        v, f, dl, nacc, _, _ = propagate(
            v, f, rod.left, rod.right, lam, *rod.kernel_data, rtol, kscale(rod, lam),
            _initial_step(rod, lam), empty, empty.copy(), empty.copy(), empty.copy(), 0,
        )
        ls += dl
        steps += nacc
    return (v, f, ls), steps


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lam", type=float, nargs="+", default=[1e2, 1e3, 1e4])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args(argv)
    if kernels.compiled_propagate is None:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation`")
        return 1
    config = polynomial_instance(args.seed)
    print(f"{'lambda':>10} {'steps':>8} {'python [s]':>12} {'compiled [s]':>13} {'speed-up':>9}  identical")
    for lam in args.lam:
        ref, steps = shot(kernels.python_propagate, config, lam)
        out, _ = shot(kernels.compiled_propagate, config, lam)
        tp = best_of(lambda: shot(kernels.python_propagate, config, lam), args.repeat)
        tc = best_of(lambda: shot(kernels.compiled_propagate, config, lam), args.repeat)
        print(f"{lam:10.3g} {steps:8d} {tp:12.4g} {tc:13.4g} {tp / tc:9.1f}  {ref == out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
