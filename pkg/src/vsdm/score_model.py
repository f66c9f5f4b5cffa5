"""Parametric score approximator trained by denoising regression.

A fixed small MLP family with its own reverse-mode gradients: input is the
state concatenated with sinusoidal features of t/T, hidden layers use the
sigmoid-weighted linear activation, and the output layer starts at zero so the
initial score is identically zero. Everything runs in float64 and is
deterministic given (theta, x, t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kernel import KernelTables, conditional_sample

__all__ = ["ScoreModel", "TrainConfig", "AdamState", "dsm_loss_and_grad", "train_round"]


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def _silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class TrainConfig:
    batch_size: int = 256
    rounds: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_rate: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise DomainError("moment rates must lie in (0, 1)")
        if not 0.0 < self.ema_rate < 1.0:
            raise DomainError("ema_rate must lie in (0, 1)")
        if self.lr <= 0.0 or self.adam_eps <= 0.0:
            raise DomainError("lr and adam_eps must be positive")
        if self.batch_size < 1 or self.rounds < 0:
            raise DomainError("batch_size >= 1 and rounds >= 0 required")


class AdamState:
    def __init__(self, n_params: int):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta, grad, cfg: TrainConfig):
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad**2
        mhat = self.m / (1.0 - cfg.beta1**self.t)
        vhat = self.v / (1.0 - cfg.beta2**self.t)
        return theta - cfg.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)


class ScoreModel:
    """MLP s_theta(x, t) -> R^d with flat float64 parameters.

    Layout: [d + time_dim] -> hidden x depth (silu) -> d, output zero-init.
    """

    def __init__(
        self,
        dim: int,
        hidden: int = 128,
        depth: int = 3,
        time_dim: int = 64,
        horizon: float = 1.0,
        seed: int = 0,
    ):
        if time_dim % 2 != 0:
            raise DomainError("time_dim must be even")
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.depth = int(depth)
        self.time_dim = int(time_dim)
        self.horizon = float(horizon)
        self._freqs = 2.0 * np.pi * np.geomspace(0.5, 64.0, time_dim // 2)

        dims = [self.dim + self.time_dim] + [self.hidden] * self.depth + [self.dim]
        self.layer_dims = dims
        self._slices = []
        offset = 0
        for i in range(len(dims) - 1):
            w_size = dims[i + 1] * dims[i]
            self._slices.append((offset, offset + w_size, (dims[i + 1], dims[i])))
            offset += w_size
            self._slices.append((offset, offset + dims[i + 1], (dims[i + 1],)))
            offset += dims[i + 1]
        self.n_params = offset

        rng = np.random.default_rng(seed)
        self.theta = np.zeros(self.n_params)
        n_layers = len(dims) - 1
        for i in range(n_layers):
            w0, w1, shape = self._slices[2 * i]
            if i < n_layers - 1:
                fan_in = shape[1]
                self.theta[w0:w1] = (rng.standard_normal(shape) / np.sqrt(fan_in)).ravel()
            # final layer stays zero so s(x, t) == 0 at initialization
        self.theta_ema = self.theta.copy()

    # -- parameter access ------------------------------------------------------

    def _weights(self, theta):
        out = []
        for i in range(len(self.layer_dims) - 1):
            w0, w1, wshape = self._slices[2 * i]
            b0, b1, _ = self._slices[2 * i + 1]
            out.append((theta[w0:w1].reshape(wshape), theta[b0:b1]))
        return out

    # -- forward ---------------------------------------------------------------

    def time_features(self, t: float) -> np.ndarray:
        tau = float(t) / self.horizon
        ang = self._freqs * tau
        return np.concatenate([np.sin(ang), np.cos(ang)])

    def _forward(self, theta, x: np.ndarray, t: float):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite input state")
        feats = np.broadcast_to(self.time_features(t), (x.shape[0], self.time_dim))
        z = np.concatenate([x, feats], axis=1)
        layers = self._weights(theta)
        pre, post = [], [z]
        for i, (w, b) in enumerate(layers):
            h = post[-1] @ w.T + b
            pre.append(h)
            post.append(_silu(h) if i < len(layers) - 1 else h)
        return pre, post

    def evaluate(self, x: np.ndarray, t: float, use_ema: bool = False) -> np.ndarray:
        """Deterministic forward pass; returns (B, d) or (d,) matching x."""
        single = np.asarray(x).ndim == 1
        theta = self.theta_ema if use_ema else self.theta
        _, post = self._forward(theta, x, t)
        return post[-1][0] if single else post[-1]

    # -- reverse mode ------------------------------------------------------------

    def loss_and_grad(self, x: np.ndarray, t: float, target: np.ndarray, theta=None):
        """Mean squared error sum_d (s - target)^2 averaged over the batch,
        with its exact gradient w.r.t. theta."""
        theta = self.theta if theta is None else theta
        target = np.atleast_2d(np.asarray(target, dtype=float))
        pre, post = self._forward(theta, x, t)
        b = post[0].shape[0]
        resid = post[-1] - target
        loss = float(np.mean(np.sum(resid**2, axis=1)))

        layers = self._weights(theta)
        grad = np.zeros_like(theta)
        gw = self._weights(grad)  # views into grad
        delta = 2.0 * resid / b
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            gwi, gbi = gw[i]
            gwi += delta.T @ post[i]
            gbi += delta.sum(axis=0)
            if i > 0:
                delta = (delta @ w) * _silu_prime(pre[i - 1])
        return loss, grad

    def update_ema(self, rate: float):
        self.theta_ema = rate * self.theta_ema + (1.0 - rate) * self.theta


def dsm_loss_and_grad(
    model: ScoreModel,
    tables: KernelTables,
    x0_batch: np.ndarray,
    eps_batch: np.ndarray,
    n: int,
    theta=None,
):
    """Denoising loss at node n: targets -L^{-T} eps on x_t = mu + L eps."""
    n = tables.check_node(n, need_invertible=True)
    x0_batch = np.atleast_2d(np.asarray(x0_batch, dtype=float))
    eps_batch = np.atleast_2d(np.asarray(eps_batch, dtype=float))
    if x0_batch.shape != eps_batch.shape:
        raise DomainError("x0 and eps batches must align")
    x_t = conditional_sample(tables, n, x0_batch, eps_batch)
    target = -(eps_batch @ tables.l_inv_t[n].T)
    return model.loss_and_grad(x_t, tables.times[n], target, theta=theta)


def train_round(
    model: ScoreModel,
    tables: KernelTables,
    data_sampler,
    cfg: TrainConfig,
    rng: np.random.Generator,
    adam: AdamState | None = None,
    max_node: int | None = None,
):
    """Run cfg.rounds denoising steps against the cached kernel tables.

    Each round draws a data batch, a uniform node n in {1..max_node}, fresh
    noise, and applies one adaptive-gradient step plus a parameter-EMA update.
    Returns (adam_state, loss_trace).
    """
    adam = adam or AdamState(model.n_params)
    # nodes 1..N-1: node 0 is singular and the sampler never queries node N
    hi = tables.n_nodes - 2 if max_node is None else int(max_node)
    trace = np.empty(cfg.rounds)
    for r in range(cfg.rounds):
        x0 = data_sampler(rng, cfg.batch_size)
        n = int(rng.integers(1, hi + 1))
        eps = rng.standard_normal((cfg.batch_size, model.dim))
        loss, grad = dsm_loss_and_grad(model, tables, x0, eps, n)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite training loss")
        model.theta = adam.step(model.theta, grad, cfg)
        model.update_ema(cfg.ema_rate)
        trace[r] = loss
    return adam, trace
