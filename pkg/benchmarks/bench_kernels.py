"""Benchmark the numba DP kernels against the pure-numpy fallback.

Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from scdkit.kernels import _numpy

try:
    from scdkit.kernels import _numba
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def time_fn(fn, *args, repeat=20):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rnnt(backend, t_len=80, u_len=40):
    rng = np.random.default_rng(0)
    blank = np.log(rng.random((t_len, u_len + 1)))
    emit = np.log(rng.random((t_len, u_len)))
    return time_fn(backend.rnnt_forward_backward, blank, emit)


def bench_edit(backend, n=400, m=420):
    rng = np.random.default_rng(1)
    ref = rng.integers(0, 50, n)
    hyp = rng.integers(0, 50, m)
    return time_fn(backend.edit_dp, ref, hyp)


def main():
    rows = [("rnnt_forward_backward (80x40)", bench_rnnt),
            ("edit_dp (400x420)", bench_edit)]
    print(f"{'kernel':<34}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, bench in rows:
        t_np = bench(_numpy)
        if HAS_NUMBA:
            bench(_numba)  # warm up JIT outside the timed region
            t_nb = bench(_numba)
            print(f"{name:<34}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
                  f"{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<34}{t_np * 1e3:>10.2f}ms{'n/a':>12}{'n/a':>10}")


if __name__ == "__main__":
    main()
