"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--T 2500]

The compiled forms are warmed up once before timing, so the figures exclude
JIT compilation. Both forms are imported directly from ``pereplica.kernels``;
the ``PEREPLICA_DISABLE_NUMBA`` flag only affects which one the package
dispatches to.
"""
import argparse
import time

import numpy as np

from pereplica import kernels
from pereplica._accel import NUMBA_AVAILABLE


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(T, K, seed):
    rng = np.random.default_rng(seed)
    R = rng.normal(0.0, 0.01, (T, K))
    w = np.linspace(0.2, 0.8, K)
    y = R @ w + rng.normal(0.0, 0.01, T)
    filt = (y, R, np.eye(K) * 1e-6, 1e-4, np.full(K, 0.5), np.eye(K) * 0.25,
            np.full(K, -1.0), np.full(K, 2.0), False)
    r = rng.normal(0.0003, 0.01, T * 20)
    trend = rng.normal(-0.3, 1.2, T * 20)
    return [
        ("filter (likelihood pass)", kernels.filter_loop, kernels.filter_numpy, filt),
        ("underwater", kernels.underwater_loop, kernels.underwater_numpy, (r,)),
        ("hysteresis", kernels.hysteresis_loop, kernels.hysteresis_numpy, (trend, -1.0, 0.0, 5)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=2500)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba unavailable or disabled: both columns time the same python code")

    print(f"{'kernel':<26}{'numba ms':>11}{'numpy ms':>11}{'speedup':>10}")
    for name, fast, slow, a in cases(args.T, args.K, args.seed):
        fast(*a)  # compile
        tf = best_of(fast, a, args.repeat)
        ts = best_of(slow, a, args.repeat)
        print(f"{name:<26}{tf * 1e3:>11.3f}{ts * 1e3:>11.3f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
