"""Compare the numba and pure-numpy implementations of the ML search kernel.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from sfim import kernels
from sfim._accel import HAVE_NUMBA


def ml_case(rng, users=2, m=1024, p=16):
    y = rng.standard_normal(p) + 1j * rng.standard_normal(p)
    contribs = rng.standard_normal((users, m, p)) + 1j * rng.standard_normal((users, m, p))
    return y, contribs


def bench(fn, args, repeat):
    fn(*args)  # warm-up (JIT compile)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba unavailable or disabled (SFIM_NUMBA=0); only numpy timings shown")
    rng = np.random.default_rng(0)
    cases = [
        ("ml_search U=2 M=1024 P=16", kernels.ml_search_numpy, kernels.ml_search_numba,
         ml_case(rng)),
    ]
    print(f"{'kernel':30s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>8s}")
    for name, f_np, f_nb, a in cases:
        t_np = bench(f_np, a, args.repeat)
        if f_nb is None:
            print(f"{name:30s} {t_np * 1e3:12.3f} {'-':>12s} {'-':>8s}")
            continue
        t_nb = bench(f_nb, a, args.repeat)
        r_np, r_nb = f_np(*a), f_nb(*a)
        if isinstance(r_np, tuple):
            assert np.array_equal(r_np[0], r_nb[0]) and np.isclose(r_np[1], r_nb[1])
        else:
            assert np.allclose(r_np, r_nb, rtol=1e-10, atol=1e-10)
        print(f"{name:30s} {t_np * 1e3:12.3f} {t_nb * 1e3:12.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
