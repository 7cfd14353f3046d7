"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Checks that both paths agree before timing. With MAAC_DISABLE_NUMBA=1 the
"numba" column runs the same loops interpreted, which is only useful as a
sanity check.
"""

import argparse
import time

import numpy as np

from maac import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x = rng.normal(size=(8, 8, 64, 32))
    w = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    g = rng.normal(size=(8, 16, 64, 32))
    a = rng.integers(0, 30, size=400)
    c = rng.integers(0, 30, size=400)
    yield ("conv2d forward", lambda: kernels.conv2d_forward_numpy(x, w, b, 1),
           lambda: kernels.conv2d_forward_numba(x, w, b, 1))
    yield ("conv2d backward", lambda: kernels.conv2d_backward_numpy(g, x, w, 1),
           lambda: kernels.conv2d_backward_numba(g, x, w, 1))
    yield ("lcs 400x400", lambda: kernels.lcs_length_numpy(a, c), lambda: kernels.lcs_length_numba(a, c))


def agree(r1, r2):
    if isinstance(r1, tuple):
        return all(np.allclose(p, q, rtol=1e-10, atol=1e-10) for p, q in zip(r1, r2))
    return np.allclose(r1, r2, rtol=1e-10, atol=1e-10)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba active: {kernels.USING_NUMBA}")
    print(f"{'kernel':<18} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for name, f_np, f_nb in cases(rng):
        if not agree(f_np(), f_nb()):      # also warms up the JIT
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_np, t_nb = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{name:<18} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
