"""Benchmark the numba kernel backend against the pure-numpy fallback.

Run: python3 benchmarks/bench_kernels.py [--size 64] [--batch 32] [--repeat 5]
Imports both implementations directly, so BRAINCNN_NO_NUMBA is irrelevant
here.
"""

import argparse
import time

import numpy as np

from braincnn.kernels import _numba_impl, _numpy_impl


def timeit(fn, repeat):
    fn()  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--filters", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.random((args.batch, args.size, args.size, args.channels), dtype=np.float32)
    k = rng.random((3, 3, args.channels, args.filters), dtype=np.float32)
    g = rng.random((args.batch, args.size - 2, args.size - 2, args.filters),
                   dtype=np.float32)

    cases = {
        "conv2d forward": lambda impl: impl.conv2d(x, k, 1),
        "conv2d input grad": lambda impl: impl.conv2d_input_grad(g, k, x.shape, 1),
        "conv2d kernel grad": lambda impl: impl.conv2d_kernel_grad(g, x, 3, 3, 1),
        "maxpool forward": lambda impl: impl.maxpool2d(x, 2, 2, 2),
    }
    print(f"batch={args.batch} size={args.size} cin={args.channels} "
          f"cout={args.filters} (best of {args.repeat})")
    print(f"{'kernel':<20} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, call in cases.items():
        t_np = timeit(lambda: call(_numpy_impl), args.repeat)
        t_nb = timeit(lambda: call(_numba_impl), args.repeat)
        print(f"{name:<20} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
