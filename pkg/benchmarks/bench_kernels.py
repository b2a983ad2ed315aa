"""Numba vs numpy timings for the kernels in ``otca.kernels``.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call (compilation, or cache load) is excluded from timings.
"""
import argparse
import time

import numpy as np

from otca import kernels


def best_of(fn, repeat):
    fn()  # warm-up / JIT
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    A = rng.uniform(-3, 3, size=(10_000, 4))
    lam = rng.uniform(0, 1, size=10_000)
    profiles = rng.normal(size=(2_000, 2, 16))
    ranks_in = rng.integers(0, 50, size=5_000).astype(float)
    return {
        "moca_solve_rows (10k x K=4)": (
            lambda: kernels.moca_solve_rows_nb(A, lam, 1e-8),
            lambda: kernels.moca_solve_rows_np(A, lam, 1e-8),
        ),
        "grid_quadratic_min (200 x 6e4 pts)": (
            lambda: [kernels.grid_quadratic_min_nb(-3.0, 3.0, l, 60_001) for l in lam[:200]],
            lambda: [kernels.grid_quadratic_min_np(-3.0, 3.0, l, 60_001) for l in lam[:200]],
        ),
        "pairwise_agreement (2k x T=16)": (
            lambda: [kernels.pairwise_agreement_nb(x, y) for x, y in profiles],
            lambda: [kernels.pairwise_agreement_np(x, y) for x, y in profiles],
        ),
        "average_ranks (n=5000, ties)": (
            lambda: kernels.average_ranks_nb(ranks_in),
            lambda: kernels.average_ranks_np(ranks_in),
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':38s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, (nb_fn, np_fn) in cases(rng).items():
        t_nb = best_of(nb_fn, args.repeat)
        t_np = best_of(np_fn, args.repeat)
        print(f"{name:38s} {t_nb * 1e3:11.2f} {t_np * 1e3:11.2f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
