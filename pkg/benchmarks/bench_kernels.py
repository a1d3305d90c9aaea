"""Compiled core against the numpy fallback on the two hot kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-call timings, the speedup and the largest disagreement.
"""
import argparse
import timeit

import numpy as np

from mhecert import _core_py

try:
    from mhecert import _core
except ImportError:
    _core = None


def _shooting_case(M, n=2, q=3, p=1, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((M, n, n)) * 0.5, rng.standard_normal((M, n, q)),
            rng.standard_normal((M, p, n)), rng.standard_normal((M, p, q)))


def _time(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        print("compiled core not built; only the fallback is available")
        return
    print(f"{'kernel':<28} {'python [us]':>12} {'cython [us]':>12} {'speedup':>8} {'max diff':>10}")
    for M in (15, 60, 300):
        case = _shooting_case(M)
        tp = _time(lambda: _core_py.shooting_sensitivities(*case), args.repeat)
        tc = _time(lambda: _core.shooting_sensitivities(*case), args.repeat)
        diff = max(np.abs(a - b).max() for a, b in zip(_core_py.shooting_sensitivities(*case),
                                                       _core.shooting_sensitivities(*case)))
        print(f"{'sensitivities M=' + str(M):<28} {tp * 1e6:>12.1f} {tc * 1e6:>12.1f} "
              f"{tp / tc:>8.1f} {diff:>10.2e}")
    for T in (300, 100000):
        times = np.arange(T)
        tp = _time(lambda: _core_py.uniform01(12345, times, 3), args.repeat)
        tc = _time(lambda: _core.uniform01(12345, times, 3), args.repeat)
        same = np.array_equal(_core_py.uniform01(12345, times, 3), _core.uniform01(12345, times, 3))
        print(f"{'uniform01 T=' + str(T):<28} {tp * 1e6:>12.1f} {tc * 1e6:>12.1f} "
              f"{tp / tc:>8.1f} {'bitwise' if same else 'DIFFER':>10}")


if __name__ == "__main__":
    main()
