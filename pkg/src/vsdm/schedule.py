"""Scalar noise schedule beta_t and its exact integral."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["BetaSchedule"]


@dataclass(frozen=True)
class BetaSchedule:
    """Noise rate beta(t) = beta_min + (t/T)^alpha (beta_max - beta_min) on [0, T].

    The interpolation runs in normalized time t/T so that beta(0) = beta_min and
    beta(T) = beta_max for any horizon. ``n_steps`` is the number N of uniform
    grid cells, each of width h = T/N; drift matrices live on the cells, kernel
    tables on the node times n*h.
    """

    beta_min: float = 0.1
    beta_max: float = 10.0
    horizon: float = 1.0
    alpha: float = 1.0
    n_steps: int = 100

    def __post_init__(self):
        if not (0.0 < self.beta_min <= self.beta_max):
            raise DomainError("need 0 < beta_min <= beta_max")
        if self.horizon <= 0.0:
            raise DomainError("horizon must be positive")
        if self.alpha < 1.0:
            raise DomainError("alpha must be >= 1")
        if int(self.n_steps) < 1 or self.n_steps != int(self.n_steps):
            raise DomainError("n_steps must be a positive integer")

    # -- basic grid geometry -------------------------------------------------

    @property
    def h(self) -> float:
        return self.horizon / self.n_steps

    def node_times(self) -> np.ndarray:
        """Times n*h for n = 0..N (N+1 nodes bounding the N cells)."""
        return np.arange(self.n_steps + 1) * self.h

    def _check_time(self, t: float) -> float:
        t = float(t)
        if not (-1e-12 <= t <= self.horizon * (1.0 + 1e-12)):
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    # -- closed forms --------------------------------------------------------

    def beta(self, t: float) -> float:
        """beta_t, valid for 0 <= t <= T."""
        t = self._check_time(t)
        u = t / self.horizon
        return self.beta_min + u**self.alpha * (self.beta_max - self.beta_min)

    def sigma2(self, t: float) -> float:
        """Integral of beta over [0, t], in closed form.

        For beta = beta_min + (t/T)^alpha (beta_max - beta_min) the integral is
        t*beta_min + T u^{alpha+1}/(alpha+1) (beta_max - beta_min), u = t/T.
        """
        t = self._check_time(t)
        u = t / self.horizon
        return self.beta_min * t + self.horizon * u ** (self.alpha + 1.0) / (
            self.alpha + 1.0
        ) * (self.beta_max - self.beta_min)

    def cell_sigma2(self, t0: float, t1: float) -> float:
        """Integral of beta over [t0, t1]."""
        if t1 < t0:
            raise DomainError("need t0 <= t1")
        return self.sigma2(t1) - self.sigma2(t0)
