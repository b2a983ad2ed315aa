"""Hot inner loops, each in a numba flavour (``*_nb``) and a numpy one (``*_np``).

The two flavours perform the same floating point operations in the same order
wherever that is practical, so they agree bit-for-bit on the MOCA solve and to
rounding elsewhere. The unsuffixed names are the dispatch chosen by
:data:`otca._accel.USE_NUMBA`.
"""
import numpy as np

from otca._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# MOCA closed-form solve, one row per sample


def _moca_rows_loop(A, lam, eps):
    n, K = A.shape
    C = np.zeros((n, K))
    for i in range(n):
        a = A[i]
        lo = a[0]
        hi = a[0]
        top = 0
        for k in range(1, K):
            if a[k] < lo:
                lo = a[k]
            if a[k] > hi:
                hi = a[k]
                top = k
        # case 1: all advantages (numerically) equal
        if hi - lo < eps:
            C[i, top] = 1.0
            continue
        zh = lam[i] / 2.0
        if zh < lo:
            zh = lo
        elif zh > hi:
            zh = hi
        # case 2: the projected target sits on one of the advantages
        hit = -1
        for k in range(K):
            if abs(a[k] - zh) < eps:
                hit = k
                break
        if hit >= 0:
            C[i, hit] = 1.0
            continue
        # case 3: interpolate inside the first bracket of the sorted advantages
        order = np.argsort(a, kind="mergesort")
        for j in range(K - 1):
            below = a[order[j]]
            above = a[order[j + 1]]
            if below <= zh and zh <= above:
                gap = above - below
                C[i, order[j]] = (above - zh) / gap
                C[i, order[j + 1]] = (zh - below) / gap
                break
    return C


moca_solve_rows_nb = njit(_moca_rows_loop)


def moca_solve_rows_np(A, lam, eps):
    A = np.asarray(A, dtype=np.float64)
    n, K = A.shape
    rows = np.arange(n)
    C = np.zeros((n, K))
    lo = A.min(axis=1)
    hi = A.max(axis=1)
    flat = (hi - lo) < eps
    C[rows[flat], np.argmax(A[flat], axis=1)] = 1.0

    zh = np.clip(np.asarray(lam, dtype=np.float64) / 2.0, lo, hi)
    close = np.abs(A - zh[:, None]) < eps
    onto = close.any(axis=1) & ~flat
    C[rows[onto], np.argmax(close[onto], axis=1)] = 1.0

    rest = ~(flat | onto)
    if rest.any():
        Ar, zr = A[rest], zh[rest]
        order = np.argsort(Ar, axis=1, kind="stable")
        srt = np.take_along_axis(Ar, order, axis=1)
        bracket = (srt[:, :-1] <= zr[:, None]) & (zr[:, None] <= srt[:, 1:])
        j = np.argmax(bracket, axis=1)
        r = np.arange(len(zr))
        below, above = srt[r, j], srt[r, j + 1]
        gap = above - below
        Cr = np.zeros_like(Ar)
        Cr[r, order[r, j]] = (above - zr) / gap
        Cr[r, order[r, j + 1]] = (zr - below) / gap
        C[rest] = Cr
    return C


# ---------------------------------------------------------------------------
# 1-D grid minimisation of z^2 - lam*z (verification oracle)


def _grid_min_loop(lo, hi, lam, n):
    best_z = lo
    best = lo * lo - lam * lo
    if n < 2:
        return best_z, best
    span = hi - lo
    for j in range(1, n):
        z = lo + span * (j / (n - 1))
        f = z * z - lam * z
        if f < best:
            best = f
            best_z = z
    return best_z, best


grid_quadratic_min_nb = njit(_grid_min_loop)


def grid_quadratic_min_np(lo, hi, lam, n):
    if n < 2:
        return lo, lo * lo - lam * lo
    z = lo + (hi - lo) * (np.arange(n) / (n - 1))
    f = z * z - lam * z
    j = int(np.argmin(f))
    return float(z[j]), float(f[j])


# ---------------------------------------------------------------------------
# average ranks (ties share the mean of their positions), 1-based


def _average_ranks_loop(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = 0.5 * (i + j) + 1.0
        for m in range(i, j + 1):
            ranks[order[m]] = r
        i = j + 1
    return ranks


average_ranks_nb = njit(_average_ranks_loop)


def average_ranks_np(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n] - 1
    group_rank = 0.5 * (starts + ends) + 1.0
    sizes = ends - starts + 1
    ranks = np.empty(n)
    ranks[order] = np.repeat(group_rank, sizes)
    return ranks


# ---------------------------------------------------------------------------
# pairwise order agreement over all unordered index pairs


def _pair_agreement_loop(x, y):
    n = x.shape[0]
    agree = 0
    total = 0
    for a in range(n):
        for b in range(a + 1, n):
            dx = x[a] - x[b]
            dy = y[a] - y[b]
            sx = (dx > 0) - (dx < 0)
            sy = (dy > 0) - (dy < 0)
            if sx == sy:
                agree += 1
            total += 1
    return agree / total


pairwise_agreement_nb = njit(_pair_agreement_loop)


def pairwise_agreement_np(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    a, b = np.triu_indices(n, k=1)
    sx = np.sign(x[a] - x[b])
    sy = np.sign(y[a] - y[b])
    return float(np.count_nonzero(sx == sy)) / len(a)


if USE_NUMBA:
    moca_solve_rows = moca_solve_rows_nb
    grid_quadratic_min = grid_quadratic_min_nb
    average_ranks = average_ranks_nb
    pairwise_agreement = pairwise_agreement_nb
else:
    moca_solve_rows = moca_solve_rows_np
    grid_quadratic_min = grid_quadratic_min_np
    average_ranks = average_ranks_np
    pairwise_agreement = pairwise_agreement_np
