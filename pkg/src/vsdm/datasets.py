"""Synthetic 2D datasets with per-axis stretching."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

__all__ = ["Dataset", "generate"]

DATASET_NAMES = ("spiral", "checkerboard", "gaussian")


@dataclass(frozen=True)
class Dataset:
    """Generator spec: base shape, coordinatewise stretch, noise level.

    Base shapes are standardized to zero mean and unit per-axis standard
    deviation before the stretch is applied, so stretch=(1, 8) yields a cloud
    whose second axis really is 8x wider.
    """

    name: str = "spiral"
    stretch: tuple = (1.0, 1.0)
    noise: float = 0.05
    mean: tuple = (0.0, 0.0)
    cov: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise DomainError(f"dataset must be one of {DATASET_NAMES}")
        if any(s <= 0 for s in self.stretch):
            raise DomainError("stretch factors must be positive")
        if len(self.stretch) != self.dim:
            raise DomainError("stretch length must match the dimension")

    @property
    def dim(self) -> int:
        return 2 if self.name != "gaussian" else len(self.mean)


@lru_cache(maxsize=None)
def _spiral_moments(noise: float):
    """Mean and per-axis std of the Archimedean arm r = theta/pi, theta ~ U[pi, 4pi]."""
    lo, hi = np.pi, 4.0 * np.pi
    norm = hi - lo

    def mom(f):
        return quad(f, lo, hi, limit=200)[0] / norm

    mx = mom(lambda th: th / np.pi * np.cos(th))
    my = mom(lambda th: th / np.pi * np.sin(th))
    vx = mom(lambda th: (th / np.pi * np.cos(th)) ** 2) - mx**2 + noise**2
    vy = mom(lambda th: (th / np.pi * np.sin(th)) ** 2) - my**2 + noise**2
    return np.array([mx, my]), np.sqrt([vx, vy])


def _spiral(count: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(np.pi, 4.0 * np.pi, size=count)
    r = theta / np.pi
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    pts += noise * rng.standard_normal((count, 2))
    mean, std = _spiral_moments(noise)
    return (pts - mean) / std


# black cells of the 4x4 board on [-2, 2]^2: (i + j) even
_BLACK_CELLS = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]
_CHECKER_STD = 2.0 / np.sqrt(3.0)  # per-axis marginal is uniform on [-2, 2]


def _checkerboard(count: int, rng: np.random.Generator) -> np.ndarray:
    cells = rng.integers(0, len(_BLACK_CELLS), size=count)
    offsets = rng.uniform(0.0, 1.0, size=(count, 2))
    ij = np.array(_BLACK_CELLS)[cells]
    pts = -2.0 + (ij + offsets)
    return pts / _CHECKER_STD


def generate(dataset: Dataset, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` samples; deterministic given the generator state."""
    if count < 0:
        raise DomainError("count must be nonnegative")
    if count == 0:
        return np.zeros((0, dataset.dim))
    if dataset.name == "spiral":
        base = _spiral(count, dataset.noise, rng)
    elif dataset.name == "checkerboard":
        base = _checkerboard(count, rng)
    else:
        mean = np.asarray(dataset.mean, dtype=float)
        cov = np.asarray(dataset.cov, dtype=float)
        chol = np.linalg.cholesky(cov)
        base = mean + rng.standard_normal((count, len(mean))) @ chol.T
    return base * np.asarray(dataset.stretch, dtype=float)
