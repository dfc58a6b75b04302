"""Shared Monte-Carlo plumbing: seeded substreams, blockwise reductions,
standard errors, and weighted log-log slope fits.

Every sampler in the package takes an explicit integer seed and derives
per-block substreams from it with ``numpy.random.SeedSequence.spawn``.
Reductions sum fixed-size blocks in index order (numpy's pairwise summation
within each block, then a pairwise sum over the stacked block axis), so the
result is identical no matter how many worker threads processed the blocks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

DEFAULT_BLOCK = 1 << 16

# 95% two-sided normal quantile, used by every confidence statement below.
Z95 = 1.959963984540054


def rng_from(seed) -> np.random.Generator:
    """PCG64 generator from an integer seed or a SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


def block_sizes(n_total: int, block: int = DEFAULT_BLOCK) -> list[int]:
    """Fixed-size blocks covering ``n_total`` samples (last one ragged)."""
    if n_total <= 0:
        raise ValueError(f"sample count must be positive, got {n_total}")
    full, rest = divmod(n_total, block)
    return [block] * full + ([rest] if rest else [])


def map_blocks(
    fn: Callable[[np.random.Generator, int, int], tuple],
    n_total: int,
    seed: int,
    block: int = DEFAULT_BLOCK,
    threads: int = 1,
) -> tuple:
    """Run ``fn(rng, size, block_index) -> tuple of per-block sums`` over all
    blocks and return the elementwise totals.

    The block layout and substream seeds depend only on (n_total, seed,
    block), never on ``threads``; partial results are stored by block index
    and combined in that order.
    """
    sizes = block_sizes(n_total, block)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    parts: list[tuple | None] = [None] * len(sizes)

    def run(i: int) -> None:
        parts[i] = fn(rng_from(seeds[i]), sizes[i], i)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(len(sizes))))
    else:
        for i in range(len(sizes)):
            run(i)
    return tuple(
        np.sum(np.stack(comp, axis=0), axis=0) for comp in zip(*parts)
    )


def mean_stderr(s1, s2, n: int):
    """Mean and standard error from raw sums ``s1 = sum(x)``, ``s2 = sum(x^2)``."""
    m = np.asarray(s1, dtype=float) / n
    var = np.maximum(np.asarray(s2, dtype=float) / n - m * m, 0.0)
    return m, np.sqrt(var / n)


def variance_stderr(n: int, m1: float, m2: float, m3: float, m4: float) -> float:
    """Delta-method stderr of the plug-in variance ``m2 - m1**2``.

    ``m_k`` are raw sample moments mean(e**k) of the same sample.
    """
    var_e = m2 - m1 * m1
    var_e2 = m4 - m2 * m2
    cov = m3 - m1 * m2
    v = var_e2 + 4.0 * m1 * m1 * var_e - 4.0 * m1 * cov
    return math.sqrt(max(v, 0.0) / n)


def wls_line(x: Sequence[float], y: Sequence[float], sigma: Sequence[float]):
    """Weighted least-squares line fit ``y ~ a + b x``.

    Returns (intercept, slope, slope_stderr).  Points with sigma == 0 get a
    tiny floor so exact values do not blow up the weights.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a slope fit")
    floor = 1e-12 * (1.0 + np.max(np.abs(y)))
    w = 1.0 / np.maximum(sigma, floor) ** 2
    sw = w.sum()
    xbar = (w * x).sum() / sw
    ybar = (w * y).sum() / sw
    sxx = (w * (x - xbar) ** 2).sum()
    if sxx <= 0:
        raise ValueError("degenerate abscissa in slope fit")
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    return intercept, slope, math.sqrt(1.0 / sxx)


def ratio_stderr(a: float, se_a: float, b: float, se_b: float) -> float:
    """First-order stderr of a/b, treating the estimates as uncorrelated."""
    r = a / b
    return abs(r) * math.sqrt((se_a / a) ** 2 + (se_b / b) ** 2) if a != 0 else abs(se_a / b)
