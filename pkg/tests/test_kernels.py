"""Both kernel flavours must agree; the dispatch honours OTCA_NUMBA."""
import os
import subprocess
import sys

import numpy as np
import pytest

from otca import kernels


def test_moca_rows_bitwise_parity(rng):
    A = rng.uniform(-3, 3, size=(5000, 4))
    A[::7, 1] = A[::7, 2]               # ties
    A[::11] = 0.5                        # flat rows
    lam = rng.uniform(0, 1, size=5000)
    lam[::13] = 2 * A[::13, 0]           # target lands on an advantage
    lam = np.abs(lam)
    np.testing.assert_array_equal(kernels.moca_solve_rows_nb(A, lam, 1e-8),
                                  kernels.moca_solve_rows_np(A, lam, 1e-8))


@pytest.mark.parametrize("lo, hi, lam, n", [(-2.0, 3.0, 1.0, 50_001), (4.0, 5.0, 0.0, 10_001),
                                            (0.3, 0.3, 0.7, 1), (-1.0, 1.0, 0.0, 2)])
def test_grid_parity(lo, hi, lam, n):
    z1, f1 = kernels.grid_quadratic_min_nb(lo, hi, lam, n)
    z2, f2 = kernels.grid_quadratic_min_np(lo, hi, lam, n)
    assert z1 == pytest.approx(z2, abs=1e-12)
    assert f1 == pytest.approx(f2, abs=1e-12)


def test_ranks_and_agreement_parity(rng):
    for _ in range(50):
        x = rng.integers(0, 5, size=12).astype(float)
        y = rng.normal(size=12)
        np.testing.assert_array_equal(kernels.average_ranks_nb(x), kernels.average_ranks_np(x))
        assert kernels.pairwise_agreement_nb(x, y) == kernels.pairwise_agreement_np(x, y)


def test_env_flag_selects_numpy_path():
    env = dict(os.environ, OTCA_NUMBA="0")
    code = ("from otca import kernels, _accel; "
            "print(_accel.USE_NUMBA, kernels.moca_solve_rows is kernels.moca_solve_rows_np)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["False", "True"]
