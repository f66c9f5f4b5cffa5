"""Independent ground truth for linear forward processes.

Everything here is deliberately redundant with :mod:`vsdm.kernel`: Gaussian
marginals propagate through the closed-form maps, while the moment ODEs are
integrated numerically with a hand-written RK4. The two routes are compared in
tests and in the kernel-check command; neither may be replaced by the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drift import DriftGrid
from .errors import DomainError
from .kernel import KernelTables, beta_d_integral, covariance_general, mean_map
from .schedule import BetaSchedule

__all__ = [
    "GaussianMarginal",
    "propagate_gaussian",
    "gaussian_score",
    "integrate_moment_odes",
    "OracleScore",
]


@dataclass(frozen=True)
class GaussianMarginal:
    """A Gaussian law N(mean, cov) with its affine score x -> -cov^{-1}(x - mean)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise DomainError("covariance must be symmetric")


def propagate_gaussian(
    m0: np.ndarray,
    s0: np.ndarray,
    schedule: BetaSchedule,
    grid: DriftGrid,
    t: float,
) -> GaussianMarginal:
    """Marginal of the forward process started from N(m0, S0) at node time t."""
    m0 = np.asarray(m0, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    m_t = mean_map(schedule, grid, t)
    _, _, sig = covariance_general(schedule, grid, t)
    cov = m_t @ s0 @ m_t.T + sig
    return GaussianMarginal(mean=m_t @ m0, cov=0.5 * (cov + cov.T))


def gaussian_score(marginal: GaussianMarginal, x: np.ndarray) -> np.ndarray:
    """-cov^{-1}(x - mean); x may be (d,) or (B, d)."""
    cov = np.asarray(marginal.cov, dtype=float)
    if np.linalg.cond(cov) > 1e14:
        raise DomainError("singular covariance has no score")
    x = np.asarray(x, dtype=float)
    resid = x - marginal.mean
    return -np.linalg.solve(cov, resid.T).T


def integrate_moment_odes(
    schedule: BetaSchedule,
    grid: DriftGrid,
    t: float,
    s0: np.ndarray | None = None,
    substeps_per_cell: int = 20,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 reference integration of dM/dt = -1/2 b D M and the covariance ODE.

    dSigma/dt = -1/2 beta (D Sigma + Sigma D^T) + beta I, symmetrized after
    every substep. D is held at its cell value so RK4 never straddles a jump.
    """
    t = schedule._check_time(t)
    d = grid.dim
    if s0 is None:
        s0 = np.zeros((d, d))
    m = np.eye(d)
    sig = np.array(s0, dtype=float)
    h = schedule.h
    eye = np.eye(d)

    t_done = 0.0
    n = 0
    while t_done < t - 1e-15 and n < grid.n_cells:
        t_next = min((n + 1) * h, t)
        dmat = grid.d_at(n)
        span = t_next - t_done
        if span > 0:
            k = max(int(substeps_per_cell), 1)
            dt = span / k
            for i in range(k):
                ti = t_done + i * dt

                def f_m(tau, mm):
                    return -0.5 * schedule.beta(tau) * dmat @ mm

                def f_s(tau, ss):
                    b = schedule.beta(tau)
                    return -0.5 * b * (dmat @ ss + ss @ dmat.T) + b * eye

                k1m, k1s = f_m(ti, m), f_s(ti, sig)
                k2m, k2s = f_m(ti + 0.5 * dt, m + 0.5 * dt * k1m), f_s(ti + 0.5 * dt, sig + 0.5 * dt * k1s)
                k3m, k3s = f_m(ti + 0.5 * dt, m + 0.5 * dt * k2m), f_s(ti + 0.5 * dt, sig + 0.5 * dt * k2s)
                k4m, k4s = f_m(ti + dt, m + dt * k3m), f_s(ti + dt, sig + dt * k3s)
                m = m + dt / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
                sig = sig + dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
                sig = 0.5 * (sig + sig.T)
        t_done = t_next
        n += 1
    return m, sig


class OracleScore:
    """Exact marginal score for Gaussian data, evaluated on kernel-table nodes.

    Drop-in replacement for a trained score model inside the samplers and the
    drift optimizer, used to validate both without circular dependence on the
    learned network.
    """

    def __init__(self, data_mean, data_cov, tables: KernelTables):
        self.tables = tables
        d = tables.dim
        data_mean = np.asarray(data_mean, dtype=float).reshape(d)
        data_cov = np.asarray(data_cov, dtype=float).reshape(d, d)
        self.marginals = []
        for j in range(tables.n_nodes):
            m_t = tables.mean[j]
            cov = m_t @ data_cov @ m_t.T + tables.sigma[j]
            self.marginals.append(
                GaussianMarginal(mean=m_t @ data_mean, cov=0.5 * (cov + cov.T))
            )

    def __call__(self, x: np.ndarray, n: int) -> np.ndarray:
        return gaussian_score(self.marginals[int(n)], x)
