"""Backward-time generation: Euler-Maruyama SDE and probability-flow ODE.

Time runs down the node grid from n = N-1 (prior draw from N(0, Sigma at
(N-1)h)) to n = 0. A step leaving node n subtracts the forward-time drift, so

    SDE:  x <- x + (1/2 beta_n D_n x + beta_n s(x, t_n)) h + sqrt(beta_n h) xi
    ODE:  x <- x + (1/2 beta_n D_n x + 1/2 beta_n s(x, t_n)) h

which reverses dx = -1/2 beta D x dt + sqrt(beta) dw exactly in the Gaussian
limit. The final step never evaluates the score at t = 0. Chains use
counter-based RNG streams keyed by (seed, chain), so serial and parallel
execution produce identical draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SamplerError
from .kernel import KernelTables

__all__ = [
    "Trajectory",
    "SampleResult",
    "chain_rng",
    "prior_sample",
    "em_backward_step",
    "ode_backward_step",
    "sample_batch",
]

MODES = ("sde", "ode-euler", "ode-heun")


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Independent Philox stream for one chain, derived from (seed, chain)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Trajectory:
    """States indexed n = N-1 down to 0 for one chain."""

    indices: np.ndarray   # (N,) strictly decreasing
    states: np.ndarray    # (N, d)
    seed: int
    chain: int


@dataclass
class SampleResult:
    samples: np.ndarray                  # (count, d) terminal states
    trajectories: list = field(default_factory=list)
    score_evaluations: int = 0           # per generated sample
    mode: str = "sde"
    seed: int = 0


def prior_sample(tables: KernelTables, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    """Draw from N(0, Sigma) at the last usable node (N-1)."""
    n = tables.n_nodes - 2
    if n < 1:
        raise DomainError("grid too short for a prior node")
    eps = rng.standard_normal((count, tables.dim))
    return eps @ tables.l[n].T


class _CountingScore:
    def __init__(self, score_fn):
        self.score_fn = score_fn
        self.calls = 0

    def __call__(self, x, n):
        self.calls += 1
        out = np.asarray(self.score_fn(x, n), dtype=float)
        if not np.all(np.isfinite(out)):
            raise SamplerError("score model produced non-finite values")
        return out


def _drift_down(tables: KernelTables, n: int, x: np.ndarray, score_val: np.ndarray, ode: bool) -> np.ndarray:
    beta = tables.beta[n]
    dmat = tables.dmat[n]
    factor = 0.5 if ode else 1.0
    return 0.5 * beta * (x @ dmat.T) + factor * beta * score_val


def em_backward_step(
    tables: KernelTables,
    n: int,
    x: np.ndarray,
    score_fn,
    xi: np.ndarray,
    h: float,
) -> np.ndarray:
    """One stochastic step from node n to node n-1."""
    if n < 1:
        raise DomainError("stochastic step needs n >= 1")
    s = score_fn(x, n)
    if not np.all(np.isfinite(np.asarray(s))):
        raise SamplerError("score model produced non-finite values")
    drift = _drift_down(tables, n, x, np.asarray(s, dtype=float), ode=False)
    return x + drift * h + np.sqrt(tables.beta[n] * h) * xi


def ode_backward_step(
    tables: KernelTables,
    n: int,
    x: np.ndarray,
    score_fn,
    h: float,
    heun: bool = False,
) -> np.ndarray:
    """One deterministic step from node n to node n-1 (Euler or Heun)."""
    if n < 1:
        raise DomainError("deterministic step needs n >= 1")
    s = score_fn(x, n)
    if not np.all(np.isfinite(np.asarray(s))):
        raise SamplerError("score model produced non-finite values")
    v = _drift_down(tables, n, x, np.asarray(s, dtype=float), ode=True)
    x_euler = x + v * h
    if not heun or n == 1:
        # the final step degenerates to Euler: no score evaluation at t=0
        return x_euler
    s2 = score_fn(x_euler, n - 1)
    v2 = _drift_down(tables, n - 1, x_euler, np.asarray(s2, dtype=float), ode=True)
    return x + 0.5 * (v + v2) * h


def sample_batch(
    tables: KernelTables,
    score_fn,
    count: int,
    mode: str = "sde",
    seed: int = 0,
    keep_trajectories: bool = False,
    chunk: int = 1024,
) -> SampleResult:
    """Generate ``count`` terminal samples, optionally with full trajectories.

    ``score_fn(x, n)`` evaluates the score at node n for a (B, d) batch. Noise
    is drawn per chain from its own stream, so results are independent of
    ``chunk`` and reproducible from ``seed`` alone.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    if count < 0:
        raise DomainError("count must be nonnegative")
    d = tables.dim
    result = SampleResult(samples=np.zeros((count, d)), mode=mode, seed=seed)
    if count == 0:
        return result

    n_start = tables.n_nodes - 2
    h_steps = np.diff(tables.times)
    evals_per_sample = None
    for lo in range(0, count, chunk):
        hi = min(lo + chunk, count)
        b = hi - lo
        # per-chain noise tables keep chain streams independent of chunking
        priors = np.empty((b, d))
        noises = np.empty((b, n_start, d)) if mode == "sde" else None
        for i in range(b):
            rng = chain_rng(seed, lo + i)
            eps = rng.standard_normal(d)
            priors[i] = eps @ tables.l[n_start].T
            if mode == "sde":
                noises[i] = rng.standard_normal((n_start, d))

        x = priors
        counting = _CountingScore(score_fn)
        if keep_trajectories:
            traj = np.empty((b, n_start + 1, d))
            traj[:, 0] = x
        for step, n in enumerate(range(n_start, 0, -1)):
            h = h_steps[n - 1]
            if mode == "sde":
                x = em_backward_step(tables, n, x, counting, noises[:, step], h)
            else:
                x = ode_backward_step(tables, n, x, counting, h, heun=(mode == "ode-heun"))
            if not np.all(np.isfinite(x)):
                raise SamplerError(f"non-finite state while stepping from node {n}")
            if keep_trajectories:
                traj[:, step + 1] = x
        result.samples[lo:hi] = x
        # one batched call = one evaluation per chain in the chunk
        evals_per_sample = counting.calls
        if keep_trajectories:
            indices = np.arange(n_start, -1, -1)
            for i in range(b):
                result.trajectories.append(
                    Trajectory(indices=indices.copy(), states=traj[i], seed=seed, chain=lo + i)
                )
    result.score_evaluations = int(evals_per_sample)
    return result
