"""Conditional flow matching on normalized action chunks.

Straight-line probability path: ``u_t = (1 - t) u_0 + t u_1`` with target
velocity ``u_1 - u_0``; sampling integrates the learned field from t=0 to t=1
with Euler (ODE) or Euler-Maruyama (SDE) steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import CarParams
from .network import Adam, PolicyNet

log = logging.getLogger(__name__)

MODES = ("ode", "sde")


class TrainingError(RuntimeError):
    pass


@dataclass
class SampleConfig:
    steps: int = 1
    mode: str = "ode"
    sde_noise: float = 0.0
    dgb: float = 0.85
    final_noise: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "sde" and not self.sde_noise > 0:
            raise ValueError("sde mode needs sde_noise > 0")
        if not 0.0 <= self.dgb <= 1.0:
            raise ValueError("dgb must lie in [0, 1]")
        if self.final_noise < 0 or self.sde_noise < 0:
            raise ValueError("noise scales must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 150
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    horizon: int = 16
    hidden: tuple = (256, 256, 256)
    init_scale: float = 1.0
    rng_seed: int = 0
    stride: int = 4
    mirror: bool = True
    final_lr_fraction: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.horizon < 1 or self.stride < 1:
            raise ValueError("batch_size, epochs, horizon and stride must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


class ActionScaler:
    """Per-component affine map to the normalized chunk space.

    By default the control box maps onto [-1, 1]; a dataset can supply its
    own ``offset``/``scale`` so that the expert's action range fills [-1, 1]
    instead. Denormalized actions are always clamped to the control box.
    """

    def __init__(self, params: CarParams, offset=None, scale=None):
        lo, hi = params.action_low, params.action_high
        self.low, self.high = lo, hi
        self.offset = (hi + lo) / 2.0 if offset is None else np.asarray(offset, dtype=float).copy()
        self.scale = (hi - lo) / 2.0 if scale is None else np.asarray(scale, dtype=float).copy()
        if self.offset.shape != (2,) or self.scale.shape != (2,) or not (self.scale > 0).all():
            raise ValueError("action normalization needs two offsets and two positive scales")

    def normalize(self, actions) -> np.ndarray:
        return (np.asarray(actions) - self.offset) / self.scale

    def denormalize(self, u) -> np.ndarray:
        a = np.asarray(u).reshape(-1, 2) * self.scale + self.offset
        return np.clip(a, self.low, self.high)


def flow_batch(u1: np.ndarray, rng: np.random.Generator):
    """Draw (u0, t, u_t, target) for a batch of data chunks."""
    u0 = rng.standard_normal(u1.shape)
    t = rng.random(u1.shape[0])
    u_t = (1.0 - t)[:, None] * u0 + t[:, None] * u1
    return u0, t, u_t, u1 - u0


def fm_loss(net, u1, cond, rng: np.random.Generator, with_grads: bool = True):
    """Mean squared velocity error on one batch; returns (loss, grads or None).

    ``net`` may be any callable ``net(u_t, t, cond)``; gradients are produced
    only for a :class:`PolicyNet`.
    """
    u1 = np.atleast_2d(np.asarray(u1, dtype=float))
    if u1.shape[0] == 0:
        raise ValueError("empty batch")
    cond = np.atleast_2d(cond)
    _, t, u_t, target = flow_batch(u1, rng)
    if with_grads and isinstance(net, PolicyNet):
        pred, acts = net.forward_cached(u_t, t, cond)
        diff = pred - target
        grads = net.backward(acts, 2.0 * diff / diff.size)
        return float(np.mean(diff * diff)), grads
    diff = np.atleast_2d(net(u_t, t, cond)) - target
    return float(np.mean(diff * diff)), None


def integrate_flow(net, cond, cfg: SampleConfig, rng: np.random.Generator, dim: int, u0=None) -> np.ndarray:
    """Pre-clamp normalized chunk after ``cfg.steps`` Euler(-Maruyama) steps."""
    u = rng.standard_normal(dim) if u0 is None else np.array(u0, dtype=float)
    dt = 1.0 / cfg.steps
    sq = math.sqrt(dt)
    for i in range(cfg.steps):
        t = i * dt
        u = u + net(u, t, cond) * dt
        if cfg.mode == "sde":
            u = u + cfg.sde_noise * (1.0 - t) * sq * rng.standard_normal(dim)
    if cfg.final_noise > 0:
        u = u + cfg.final_noise * rng.standard_normal(dim)
    return u


def sample_actions(net: PolicyNet, cond, cfg: SampleConfig, rng: np.random.Generator,
                   scaler: ActionScaler) -> np.ndarray:
    """One (H, 2) action chunk in physical units, clamped to the control box."""
    u = integrate_flow(net, cond, cfg, rng, net.chunk_dim)
    return scaler.denormalize(u)


@dataclass
class TrainingSet:
    cond: np.ndarray
    chunks: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.cond.shape[0]


def zero_net_loss(chunks: np.ndarray) -> float:
    """Expected loss of the all-zero field: mean of |u1 - u0|^2 per entry = E[u1^2] + 1."""
    return float(np.mean(chunks ** 2) + 1.0)


def train(data: TrainingSet, cfg: TrainConfig, cond_dim: int | None = None, log_every: int = 0):
    """Fit a :class:`PolicyNet` by Adam on shuffled minibatches.

    Returns the network and the per-step loss curve.
    """
    if len(data) == 0:
        raise TrainingError("training set is empty")
    rng = np.random.default_rng(cfg.rng_seed)
    cond_dim = data.cond.shape[1] if cond_dim is None else cond_dim
    net = PolicyNet(cond_dim, cfg.horizon, cfg.hidden, rng=rng, init_scale=cfg.init_scale)
    if data.chunks.shape[1] != net.chunk_dim:
        raise TrainingError(f"chunks have {data.chunks.shape[1]} entries, horizon needs {net.chunk_dim}")
    opt = Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    n = len(data)
    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = per_epoch * cfg.epochs
    losses = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for k in range(per_epoch):
            idx = order[k * cfg.batch_size : (k + 1) * cfg.batch_size]
            loss, grads = fm_loss(net, data.chunks[idx], data.cond[idx], rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            frac = step / max(1, total - 1)
            lr = cfg.lr * (cfg.final_lr_fraction + (1 - cfg.final_lr_fraction) * 0.5 * (1 + math.cos(math.pi * frac)))
            opt.step(grads, lr)
            losses.append(loss)
            step += 1
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d/%d  loss %.4f", epoch + 1, cfg.epochs, float(np.mean(losses[-per_epoch:])))
    return net, np.asarray(losses)
