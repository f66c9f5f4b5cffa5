"""Evaluation metrics: trajectory straightness and the two-sample energy distance."""

from __future__ import annotations

import numpy as np

from .errors import DomainError

__all__ = ["straightness", "energy_distance", "permutation_threshold", "outer_band_fraction"]


def straightness(states: np.ndarray, h: float) -> np.ndarray:
    """Per-axis integral over time of the mean absolute second time-derivative.

    ``states`` is (chains, M, d) on a uniform grid of spacing h. Second
    derivatives use central differences at interior nodes and one-sided
    differences at the two boundary nodes, combined with trapezoid weights;
    this is exact (value 2T) for x(t) = t^2 and exactly zero for affine
    trajectories. Vanishes only for straight transport.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    if states.ndim != 3 or states.shape[1] < 3:
        raise DomainError("need (chains, M>=3, d) trajectory states")
    if h <= 0:
        raise DomainError("h must be positive")
    m = states.shape[1]
    second = (states[:, 2:] - 2.0 * states[:, 1:-1] + states[:, :-2]) / h**2
    u = np.empty((states.shape[0], m, states.shape[2]))
    u[:, 1:-1] = np.abs(second)
    u[:, 0] = np.abs(second[:, 0])     # one-sided at the left boundary
    u[:, -1] = np.abs(second[:, -1])   # one-sided at the right boundary
    node_mean = u.mean(axis=0)
    weights = np.full(m, h)
    weights[0] = weights[-1] = 0.5 * h
    return weights @ node_mean


def _pairwise_mean(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    """Mean Euclidean distance over all pairs (memory-bounded; sorted O(n log n) in 1D)."""
    if a.shape[1] == 1:
        x = np.sort(a[:, 0])
        y = b[:, 0]
        prefix = np.concatenate([[0.0], np.cumsum(x)])
        k = np.searchsorted(x, y)
        total = np.sum(y * k - prefix[k] + (prefix[-1] - prefix[k]) - y * (len(x) - k))
        return float(total) / (len(a) * len(b))
    total = 0.0
    for lo in range(0, len(a), chunk):
        blk = a[lo : lo + chunk]
        d2 = np.sum(blk**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * blk @ b.T
        total += np.sqrt(np.maximum(d2, 0.0)).sum()
    return total / (len(a) * len(b))


def _within_mean(a: np.ndarray, chunk: int = 2048) -> float:
    """Mean distance over ordered distinct pairs (U-statistic denominator n(n-1))."""
    n = len(a)
    if n < 2:
        return 0.0
    if a.shape[1] == 1:
        x = np.sort(a[:, 0])
        idx = np.arange(n)
        prefix = np.concatenate([[0.0], np.cumsum(x)])[:-1]
        total = 2.0 * np.sum(idx * x - prefix)
        return float(total) / (n * (n - 1))
    total = 0.0
    for lo in range(0, n, chunk):
        blk = a[lo : lo + chunk]
        d2 = np.sum(blk**2, axis=1)[:, None] + np.sum(a**2, axis=1)[None, :] - 2.0 * blk @ a.T
        total += np.sqrt(np.maximum(d2, 0.0)).sum()
    return total / (n * (n - 1))


def energy_distance(batch_a: np.ndarray, batch_b: np.ndarray) -> float:
    """2 E|X-Y| - E|X-X'| - E|Y-Y'| with U-statistic within-sample terms."""
    batch_a = np.atleast_2d(np.asarray(batch_a, dtype=float))
    batch_b = np.atleast_2d(np.asarray(batch_b, dtype=float))
    if len(batch_a) == 0 or len(batch_b) == 0:
        raise DomainError("energy distance needs nonempty batches")
    return (
        2.0 * _pairwise_mean(batch_a, batch_b)
        - _within_mean(batch_a)
        - _within_mean(batch_b)
    )


def permutation_threshold(
    batch_a: np.ndarray,
    batch_b: np.ndarray,
    rng: np.random.Generator,
    n_permutations: int = 200,
    level: float = 0.95,
) -> float:
    """Null quantile of the energy distance under label permutation."""
    batch_a = np.atleast_2d(np.asarray(batch_a, dtype=float))
    batch_b = np.atleast_2d(np.asarray(batch_b, dtype=float))
    pooled = np.concatenate([batch_a, batch_b], axis=0)
    na = len(batch_a)
    stats = np.empty(n_permutations)
    for i in range(n_permutations):
        perm = rng.permutation(len(pooled))
        stats[i] = energy_distance(pooled[perm[:na]], pooled[perm[na:]])
    return float(np.quantile(stats, level))


def outer_band_fraction(samples: np.ndarray, axis: int, lo: float, hi: float, band: float = 0.1) -> float:
    """Fraction of samples inside the outer ``band`` of the range [lo, hi].

    The band is split evenly between both ends of the axis range.
    """
    if hi <= lo:
        raise DomainError("need lo < hi")
    x = np.asarray(samples, dtype=float)[:, axis]
    margin = 0.5 * band * (hi - lo)
    return float(np.mean((x < lo + margin) | (x > hi - margin)))
