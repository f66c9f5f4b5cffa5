"""Adaptive optimization of the linear forward drift by stochastic approximation.

The forward correction A_n x enters the drift as -1/2 beta x + beta A x. Each
grid cell's A_n is fit against states simulated from the backward process by
descending the batch mean of the integrand

    gamma_zeta = 1/2 ||z_fwd||^2 + div + zeta <z_fwd, z_bwd>,

where z_fwd = sqrt(beta) A x, z_bwd is supplied by the caller (sqrt(beta)
times the current score model), and div is the analytic divergence of
sqrt(beta) z_fwd - f for the linear base drift f = -1/2 beta x. Divergences of
linear fields are exact, so no stochastic estimator is needed. Descent on the
mean integrand is the direction under which the per-time objective is locally
convex in A; iterates use the Robbins-Monro step sizes below, an eigenvalue
floor on D = I - 2A, and optional Polyak or EMA buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drift import DriftGrid
from .errors import DomainError
from .schedule import BetaSchedule

__all__ = [
    "StepSizeSchedule",
    "gamma_zeta",
    "VariationalScore",
    "SvdGrad",
    "forward_drift",
    "variational_loss_grad",
    "sa_update",
]


@dataclass(frozen=True)
class StepSizeSchedule:
    """eta_k = amplitude / (k^exponent + offset), exponent in (1/2, 1]."""

    amplitude: float = 1.0
    offset: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.amplitude <= 0.0:
            raise DomainError("amplitude must be positive")
        if self.offset < 0.0:
            raise DomainError("offset must be nonnegative")
        if not 0.5 < self.exponent <= 1.0:
            raise DomainError("exponent must lie in (1/2, 1]")

    def eta(self, k: int) -> float:
        if k < 1:
            raise DomainError("step index starts at 1")
        return self.amplitude / (float(k) ** self.exponent + self.offset)


def gamma_zeta(z_fwd: np.ndarray, div_fwd: float, z_bwd: np.ndarray, zeta: float) -> float:
    """1/2 ||z_fwd||^2 + div_fwd + zeta <z_fwd, z_bwd> for a single state."""
    z_fwd = np.asarray(z_fwd, dtype=float)
    z_bwd = np.asarray(z_bwd, dtype=float)
    return float(0.5 * z_fwd @ z_fwd + div_fwd + zeta * z_fwd @ z_bwd)


def forward_drift(vs: "VariationalScore", n: int, x: np.ndarray, schedule: BetaSchedule) -> np.ndarray:
    """Full forward drift -1/2 beta x + beta A_n x = -1/2 beta D_n x at cell n."""
    beta = schedule.beta(n * schedule.h)
    a = vs.grid.a_at(n)
    x = np.asarray(x, dtype=float)
    return -0.5 * beta * x + beta * (x @ a.T)


@dataclass
class SvdGrad:
    """Gradient of the per-time loss w.r.t. the factored parameters of one cell."""

    du: np.ndarray   # (d, d) rows: gradients for the U Householder vectors
    dv: np.ndarray   # (d, d)
    drho: np.ndarray  # (d,)


def _householder(u: np.ndarray) -> np.ndarray:
    s = float(u @ u)
    if s < 1e-12:
        return np.eye(len(u))
    return np.eye(len(u)) - 2.0 * np.outer(u, u) / s


def _householder_product(vecs: np.ndarray) -> np.ndarray:
    out = np.eye(vecs.shape[1])
    for u in vecs:
        out = out @ _householder(u)
    return out


def _householder_product_vjp(vecs: np.ndarray, dprod: np.ndarray) -> np.ndarray:
    """Gradients w.r.t. each Householder vector given d(loss)/d(product)."""
    d = vecs.shape[1]
    hs = [_householder(u) for u in vecs]
    prefixes = [np.eye(d)]
    for hmat in hs[:-1]:
        prefixes.append(prefixes[-1] @ hmat)
    suffixes = [np.eye(d)] * len(hs)
    suf = np.eye(d)
    for i in range(len(hs) - 1, -1, -1):
        suffixes[i] = suf
        suf = hs[i] @ suf
    grads = np.zeros_like(vecs)
    for i, u in enumerate(vecs):
        s = float(u @ u)
        if s < 1e-12:
            continue
        gbar = prefixes[i].T @ dprod @ suffixes[i].T
        sym = gbar + gbar.T
        grads[i] = -2.0 * (sym @ u) / s + 4.0 * float(u @ gbar @ u) * u / s**2
    return grads


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class VariationalScore:
    """Drift grid plus SA state: parametrization, per-cell counters, averaging.

    parametrization:
        "diagonal" — A entries on the diagonal are the parameters.
        "svd"      — A = U softplus(rho) V^T per cell with U, V products of d
                     Householder reflections.
    averaging: "none" | "polyak" | "ema" with ``ema_rate`` in (0, 1).
    """

    grid: DriftGrid
    step_sizes: StepSizeSchedule = field(default_factory=StepSizeSchedule)
    parametrization: str = "diagonal"
    averaging: str = "none"
    ema_rate: float = 0.1
    k: np.ndarray = None
    abar: np.ndarray = None
    svd_params: list = None

    def __post_init__(self):
        if self.parametrization not in ("diagonal", "svd"):
            raise DomainError("parametrization must be 'diagonal' or 'svd'")
        if self.averaging not in ("none", "polyak", "ema"):
            raise DomainError("averaging must be none|polyak|ema")
        if not 0.0 < self.ema_rate < 1.0:
            raise DomainError("ema_rate must lie in (0, 1)")
        if self.parametrization == "diagonal" and not self.grid.is_diagonal:
            raise DomainError("diagonal parametrization needs a diagonal drift mode")
        if self.parametrization == "svd" and self.grid.is_diagonal:
            raise DomainError("svd parametrization needs a full drift mode")
        if self.k is None:
            self.k = np.zeros(self.grid.n_cells, dtype=int)
        if self.abar is None:
            self.abar = self.grid.a.copy()
        if self.parametrization == "svd" and self.svd_params is None:
            self.svd_params = [self._init_svd_cell(i) for i in range(self.grid.n_cells)]
            self._materialize_all()

    def _init_svd_cell(self, i: int, rho0: float = -10.0) -> dict:
        d = self.grid.dim
        rng = np.random.default_rng(12345 + i)
        u = rng.standard_normal((d, d))
        v = rng.standard_normal((d, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return {"u": u, "v": v, "rho": np.full(d, rho0)}

    def _materialize_cell(self, idx: int) -> np.ndarray:
        p = self.svd_params[idx]
        umat = _householder_product(p["u"])
        vmat = _householder_product(p["v"])
        return umat @ np.diag(_softplus(p["rho"])) @ vmat.T

    def _materialize_all(self):
        for i in range(self.grid.n_cells):
            self.grid.a[i] = self._materialize_cell(0 if self.grid.is_time_invariant else i)

    def _cell_index(self, n: int) -> int:
        return 0 if self.grid.is_time_invariant else int(n)

    def effective_grid(self) -> DriftGrid:
        """The grid consumed by kernels and samplers: averaged if enabled."""
        out = self.grid.copy()
        if self.averaging != "none":
            out.a[:] = self.abar
            out.project()
        return out


def variational_loss_grad(
    vs: VariationalScore,
    n: int,
    x_batch: np.ndarray,
    z_bwd_batch: np.ndarray,
    schedule: BetaSchedule,
    zeta: float,
):
    """Batch-mean loss and analytic gradient at cell n.

    Returns (loss, grad); grad is a (d, d) array restricted to the diagonal
    for the diagonal parametrization, or an :class:`SvdGrad` pushed through
    the factorization.
    """
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=float))
    z_bwd_batch = np.atleast_2d(np.asarray(z_bwd_batch, dtype=float))
    if x_batch.shape[0] == 0:
        raise DomainError("empty batch")
    if x_batch.shape != z_bwd_batch.shape:
        raise DomainError("state and z batches must align")
    b, d = x_batch.shape
    beta = schedule.beta(n * schedule.h)
    sqrt_b = np.sqrt(beta)
    a = vs.grid.a_at(n)

    ax = x_batch @ a.T
    z_fwd = sqrt_b * ax
    div = beta * np.trace(a) + 0.5 * beta * d
    loss = float(
        np.mean(0.5 * np.sum(z_fwd**2, axis=1))
        + div
        + zeta * np.mean(np.sum(z_fwd * z_bwd_batch, axis=1))
    )

    # d/dA of the mean integrand: beta*(A x)x^T + beta*I + zeta*sqrt(beta) z x^T
    grad_a = (
        beta * (ax.T @ x_batch) / b
        + beta * np.eye(d)
        + zeta * sqrt_b * (z_bwd_batch.T @ x_batch) / b
    )

    if vs.parametrization == "diagonal":
        return loss, np.diag(np.diagonal(grad_a))

    idx = vs._cell_index(n)
    p = vs.svd_params[idx]
    umat = _householder_product(p["u"])
    vmat = _householder_product(p["v"])
    lam = _softplus(p["rho"])
    du_mat = grad_a @ vmat @ np.diag(lam)
    dv_mat = grad_a.T @ umat @ np.diag(lam)
    drho = np.diagonal(umat.T @ grad_a @ vmat) * (1.0 / (1.0 + np.exp(-p["rho"])))
    return loss, SvdGrad(
        du=_householder_product_vjp(p["u"], du_mat),
        dv=_householder_product_vjp(p["v"], dv_mat),
        drho=np.asarray(drho),
    )


def sa_update(vs: VariationalScore, n: int, grad, sched: StepSizeSchedule | None = None) -> VariationalScore:
    """One Robbins-Monro step on cell n: descend, project, count, average."""
    sched = sched or vs.step_sizes
    idx = vs._cell_index(n)
    k_new = int(vs.k[idx]) + 1
    eta = sched.eta(k_new)

    if vs.parametrization == "diagonal":
        grad = np.asarray(grad, dtype=float)
        a_new = vs.grid.a_at(idx) - eta * np.diag(np.diagonal(grad))
        vs.grid.set_a(idx, a_new)
        _project_cell_diag(vs.grid, idx)
    else:
        p = vs.svd_params[idx]
        p["u"] = p["u"] - eta * grad.du
        p["v"] = p["v"] - eta * grad.dv
        p["rho"] = p["rho"] - eta * grad.drho
        cap = 0.5 * (1.0 - vs.grid.lambda_min)
        rho_cap = np.log(np.expm1(cap))
        p["rho"] = np.minimum(p["rho"], rho_cap)
        a_new = vs._materialize_cell(idx)
        vs.grid.set_a(idx, a_new)

    vs.k[idx] = k_new
    a_cur = vs.grid.a_at(idx)
    if vs.averaging == "polyak":
        vs.abar[idx] = (1.0 - 1.0 / k_new) * vs.abar[idx] + (1.0 / k_new) * a_cur
    elif vs.averaging == "ema":
        if k_new == 1:
            vs.abar[idx] = a_cur.copy()
        else:
            vs.abar[idx] = (1.0 - vs.ema_rate) * vs.abar[idx] + vs.ema_rate * a_cur
    else:
        vs.abar[idx] = a_cur
    if vs.grid.is_time_invariant:
        vs.abar[:] = vs.abar[idx]
    return vs


def _project_cell_diag(grid: DriftGrid, idx: int):
    d = np.diagonal(grid.d_at(idx))
    clamped = np.clip(d, grid.lambda_min, None)
    if np.any(clamped != d):
        grid.set_a(idx, 0.5 * (np.eye(grid.dim) - np.diag(clamped)))
