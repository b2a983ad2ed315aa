"""Small shared numeric helpers: cosine similarity, group statistics,
rank correlations and seeded generators."""
import numpy as np

from otca import kernels
from otca.exceptions import DegenerateError


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateError("degenerate latent")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def mean_std(xs):
    """Mean and population (divisor N) standard deviation."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 1 or xs.size < 2:
        raise ValueError("mean_std needs at least two values")
    return float(xs.mean()), float(xs.std())


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("x and y must be 1-D sequences of equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    return x, y


def pearson(x, y):
    x, y = _check_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    syy = yc @ yc
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateError("zero variance")
    # a single sqrt of the product keeps r == 1 exact for y = c*x, c a power of 2
    return float(np.clip((xc @ yc) / np.sqrt(sxx * syy), -1.0, 1.0))


def rank(x):
    """1-based ranks; tied values share their average rank."""
    return kernels.average_ranks(np.ascontiguousarray(x, dtype=np.float64))


def spearman(x, y):
    x, y = _check_pair(x, y)
    return pearson(rank(x), rank(y))


def make_rng(seed):
    """PCG64 generator (128-bit state); equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(seed))


def child_seeds(seed, n):
    """Derive ``n`` independent integer seeds from ``seed`` for forked streams."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n)]
