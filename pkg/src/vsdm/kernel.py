"""Closed-form transition kernel of the multivariate OU forward process.

The forward SDE dx = -1/2 beta_t D_t x dt + sqrt(beta_t) dw has Gaussian
transitions x_t | x_0 ~ N(M_t x_0, Sigma_t) with

    M_t     = exp(-1/2 [bD]_t),        [bD]_t = int_0^t beta_s D_s ds,
    Sigma_t = C_t H_t^{-1},            (C_t; H_t) from a 2d x 2d block
                                        matrix exponential,

and an element-wise fast path when D is diagonal. D is piecewise constant on
the schedule's grid cells; the beta factor is integrated exactly inside each
cell, so every quantity here is reproducible to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .drift import DriftGrid
from .errors import DomainError, KernelError
from .schedule import BetaSchedule

__all__ = [
    "beta_d_integral",
    "mean_map",
    "covariance_general",
    "covariance_diagonal",
    "KernelTables",
    "build_tables",
    "conditional_sample",
    "conditional_score",
    "chol_with_jitter",
]

_GRID_TOL = 1e-9


def _beta_d_integral_any(schedule: BetaSchedule, grid: DriftGrid, t: float) -> np.ndarray:
    """int_0^t beta_s D_s ds for any t in [0, T] (piecewise-constant D)."""
    t = schedule._check_time(t)
    h = schedule.h
    out = np.zeros((grid.dim, grid.dim))
    t_done = 0.0
    n = 0
    while t_done < t - 1e-15 and n < grid.n_cells:
        t_next = min((n + 1) * h, t)
        if t_next > t_done:
            out += schedule.cell_sigma2(t_done, t_next) * grid.d_at(n)
        t_done = t_next
        n += 1
    return out


def beta_d_integral(schedule: BetaSchedule, grid: DriftGrid, t: float) -> np.ndarray:
    """[bD]_t at a grid node time t = n*h; off-grid times are rejected."""
    t = schedule._check_time(t)
    ratio = t / schedule.h
    if abs(ratio - round(ratio)) > _GRID_TOL:
        raise DomainError(f"time {t} is not a grid node multiple of h={schedule.h}")
    return _beta_d_integral_any(schedule, grid, t)


def mean_map(schedule: BetaSchedule, grid: DriftGrid, t: float) -> np.ndarray:
    """M_t = exp(-1/2 [bD]_t), so that mu_{t|0} = M_t x0."""
    bd = beta_d_integral(schedule, grid, t)
    return _mean_map_from_integral(bd, grid.is_diagonal)


def _mean_map_from_integral(bd: np.ndarray, diagonal: bool) -> np.ndarray:
    if diagonal:
        return np.diag(np.exp(-0.5 * np.diagonal(bd)))
    return expm(-0.5 * bd)


def _covariance_from_integrals(
    bd: np.ndarray, s: float, sigma0: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(C_t, H_t, Sigma_t) from the 2d x 2d block exponential."""
    d = bd.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -0.5 * bd
    block[:d, d:] = s * np.eye(d)
    block[d:, d:] = 0.5 * bd.T
    e = expm(block)
    c = e[:d, :d] @ sigma0 + e[:d, d:]
    hmat = e[d:, d:]
    cond = np.linalg.cond(hmat)
    if not np.isfinite(cond) or cond > 1e14:
        raise KernelError("H_t numerically singular; drift/horizon pathological")
    sigma = c @ np.linalg.inv(hmat)
    sigma = 0.5 * (sigma + sigma.T)
    return c, hmat, sigma


def covariance_general(
    schedule: BetaSchedule,
    grid: DriftGrid,
    t: float,
    sigma0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(C_t, H_t, Sigma_{t|0}) for initial covariance Sigma_0 (default 0)."""
    if sigma0 is None:
        sigma0 = np.zeros((grid.dim, grid.dim))
    sigma0 = np.asarray(sigma0, dtype=float)
    bd = beta_d_integral(schedule, grid, t)
    s = schedule.sigma2(t)
    return _covariance_from_integrals(bd, s, sigma0)


def covariance_diagonal(
    schedule: BetaSchedule, lam: np.ndarray, t: float, lambda_min: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise kernel for time-invariant diagonal D = diag(lam).

    Returns (mean-map diagonal, L_t diagonal):
        mean = exp(-1/2 sigma_t^2 lam),  L = sqrt((1 - exp(-sigma_t^2 lam)) / lam).
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < max(lambda_min, 0.0)) or np.any(lam <= 0.0):
        raise DomainError("diagonal drift entries must sit above the positive floor")
    s = schedule.sigma2(t)
    mean_diag = np.exp(-0.5 * s * lam)
    var_diag = -np.expm1(-s * lam) / lam
    return mean_diag, np.sqrt(var_diag)


def chol_with_jitter(sigma: np.ndarray) -> np.ndarray:
    """Cholesky factor with the one-shot jitter retry for rounding at tiny t."""
    sigma = 0.5 * (sigma + sigma.T)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        d = sigma.shape[0]
        jitter = 1e-12 * np.trace(sigma) / d
        try:
            return np.linalg.cholesky(sigma + jitter * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise KernelError("covariance not positive definite after jitter") from exc


@dataclass
class KernelTables:
    """Per-node kernel quantities cached for training and sampling.

    Node j sits at ``times[j]``; node 0 is t=0 where Sigma is singular, so
    ``l`` / ``l_inv_t`` there are unusable and score ops reject it.
    """

    times: np.ndarray          # (K+1,)
    mean: np.ndarray           # (K+1, d, d)
    sigma: np.ndarray          # (K+1, d, d)
    l: np.ndarray              # (K+1, d, d); row 0 is all zeros
    l_inv_t: np.ndarray        # (K+1, d, d); row 0 is nan
    beta: np.ndarray           # (K+1,) beta at node times
    dmat: np.ndarray           # (K+1, d, d) D of the cell at each node time
    dim: int

    @property
    def n_nodes(self) -> int:
        return len(self.times)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.times, self.mean, self.sigma, self.l):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def check_node(self, n: int, need_invertible: bool = False) -> int:
        n = int(n)
        if not 0 <= n < self.n_nodes:
            raise DomainError(f"node {n} outside 0..{self.n_nodes - 1}")
        if need_invertible and n == 0:
            raise DomainError("node 0 has a singular kernel (t=0)")
        return n


def build_tables(
    schedule: BetaSchedule,
    grid: DriftGrid,
    times: np.ndarray | None = None,
    sigma0: np.ndarray | None = None,
) -> KernelTables:
    """Build kernel tables on ``times`` (default: the schedule's node grid).

    Diagonal drift uses the exact per-cell recursion (no matrix exponentials);
    full drift uses the block-exponential formula at each node.
    """
    d = grid.dim
    if times is None:
        times = schedule.node_times()
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise DomainError("times must start at 0 and be strictly increasing")
    if sigma0 is None:
        sigma0 = np.zeros((d, d))
    k = len(times)
    mean = np.empty((k, d, d))
    sigma = np.empty((k, d, d))
    lmat = np.zeros((k, d, d))
    linv = np.full((k, d, d), np.nan)

    if grid.is_diagonal and np.allclose(sigma0, 0.0):
        # exact per-cell recursion: within a cell D is constant so the moment
        # ODEs integrate in closed form against dsigma2
        m_diag = np.ones(d)
        v_diag = np.zeros(d)
        mean[0] = np.eye(d)
        sigma[0] = 0.0
        h = schedule.h
        for j in range(1, k):
            t0, t1 = times[j - 1], times[j]
            v, m = v_diag, m_diag
            t_done = t0
            n = grid.cell_for_time(t0, h)
            while t_done < t1 - 1e-15:
                t_next = min((n + 1) * h, t1)
                ds = schedule.cell_sigma2(t_done, t_next)
                lam = np.diagonal(grid.d_at(min(n, grid.n_cells - 1)))
                decay = np.exp(-ds * lam)
                v = decay * v + (-np.expm1(-ds * lam)) / lam
                m = np.exp(-0.5 * ds * lam) * m
                t_done = t_next
                n += 1
            m_diag, v_diag = m, v
            mean[j] = np.diag(m_diag)
            sigma[j] = np.diag(v_diag)
            lmat[j] = np.diag(np.sqrt(v_diag))
            linv[j] = np.diag(1.0 / np.sqrt(v_diag))
    else:
        mean[0] = np.eye(d)
        sigma[0] = np.asarray(sigma0, dtype=float)
        if not np.allclose(sigma0, 0.0):
            lmat[0] = chol_with_jitter(sigma[0])
            linv[0] = np.linalg.inv(lmat[0]).T
        for j in range(1, k):
            t = times[j]
            bd = _beta_d_integral_any(schedule, grid, t)
            mean[j] = _mean_map_from_integral(bd, diagonal=False)
            _, _, sig = _covariance_from_integrals(bd, schedule.sigma2(t), np.asarray(sigma0, dtype=float))
            sigma[j] = sig
            lmat[j] = chol_with_jitter(sig)
            linv[j] = np.linalg.inv(lmat[j]).T

    beta = np.array([schedule.beta(t) for t in times])
    dmat = np.stack([grid.d_at(grid.cell_for_time(t, schedule.h)) for t in times])
    return KernelTables(
        times=times, mean=mean, sigma=sigma, l=lmat, l_inv_t=linv,
        beta=beta, dmat=dmat, dim=d,
    )


def conditional_sample(tables: KernelTables, n: int, x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """x_t = M_t x0 + L_t eps at node n. Works on (d,) vectors or (B, d) batches."""
    n = tables.check_node(n)
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    return x0 @ tables.mean[n].T + eps @ tables.l[n].T


def conditional_score(tables: KernelTables, n: int, x_t: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """-Sigma_t^{-1}(x_t - M_t x0) at node n; requires t > 0."""
    n = tables.check_node(n, need_invertible=True)
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    resid = x_t - x0 @ tables.mean[n].T
    linv_t = tables.l_inv_t[n]
    # -L^{-T} L^{-1} r, using the cached inverse-transpose factor
    return -(resid @ linv_t) @ linv_t.T
