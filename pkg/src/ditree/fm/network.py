"""Tanh multilayer perceptron for the velocity field, with hand-written backprop."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMW1"


class WeightsFormatError(ValueError):
    pass


class PolicyNet:
    """v(u_t, t | cond): input is ``[cond, u_t, t]``, output a velocity chunk of size 2H."""

    def __init__(self, cond_dim: int, horizon: int, hidden=(256, 256, 256),
                 rng: np.random.Generator | None = None, init_scale: float = 1.0):
        self.cond_dim = int(cond_dim)
        self.horizon = int(horizon)
        self.sizes = [self.input_dim, *[int(h) for h in hidden], self.chunk_dim]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(rng.normal(0.0, init_scale / np.sqrt(fan_in), (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def chunk_dim(self) -> int:
        return 2 * self.horizon

    @property
    def input_dim(self) -> int:
        return self.cond_dim + self.chunk_dim + 1

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _inputs(self, u_t, t, cond) -> np.ndarray:
        u_t = np.atleast_2d(u_t)
        cond = np.atleast_2d(cond)
        if u_t.shape[1] != self.chunk_dim:
            raise ValueError(f"action chunk has {u_t.shape[1]} entries, expected {self.chunk_dim}")
        if cond.shape[1] != self.cond_dim:
            raise ValueError(f"condition has {cond.shape[1]} entries, expected {self.cond_dim}")
        b = u_t.shape[0]
        if cond.shape[0] != b:
            cond = np.broadcast_to(cond, (b, self.cond_dim))
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (b, 1))
        return np.concatenate([cond, u_t, t], axis=1)

    def forward(self, u_t, t, cond) -> np.ndarray:
        h = self._inputs(u_t, t, cond)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h if np.ndim(u_t) > 1 else h[0]

    __call__ = forward

    def forward_cached(self, u_t, t, cond):
        acts = [self._inputs(u_t, t, cond)]
        last = len(self.weights) - 1
        h = acts[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out) -> list[np.ndarray]:
        """Parameter gradients ordered like ``params`` given dL/d(output)."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads

    def copy(self) -> "PolicyNet":
        other = PolicyNet.__new__(PolicyNet)
        other.cond_dim, other.horizon, other.sizes = self.cond_dim, self.horizon, list(self.sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def save(self, path) -> None:
        Path(path).write_bytes(dump_weights(self))

    @classmethod
    def load(cls, path, hidden=None, cond_dim=None, horizon=None) -> "PolicyNet":
        return load_weights(Path(path).read_bytes(), hidden=hidden, cond_dim=cond_dim, horizon=horizon)


def dump_weights(net: PolicyNet) -> bytes:
    out = [MAGIC, struct.pack("<I", len(net.weights))]
    for w in net.weights:
        out.append(struct.pack("<II", *w.shape))
    for w, b in zip(net.weights, net.biases):
        out.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    out.append(struct.pack("<II", net.horizon, net.cond_dim))
    return b"".join(out)


def load_weights(blob: bytes, hidden=None, cond_dim=None, horizon=None) -> PolicyNet:
    """Parse a weights blob; optional arguments are checked against the stored shapes."""
    if blob[:4] != MAGIC:
        raise WeightsFormatError("bad magic, not a weights file")
    try:
        (n_layers,) = struct.unpack_from("<I", blob, 4)
        off = 8
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", blob, off))
            off += 8
        weights, biases = [], []
        for rows, cols in shapes:
            n = rows * cols
            w = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(rows, cols)
            off += 4 * n
            b = np.frombuffer(blob, dtype="<f4", count=cols, offset=off)
            off += 4 * cols
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
        h, c = struct.unpack_from("<II", blob, off)
        off += 8
    except (struct.error, ValueError) as exc:
        raise WeightsFormatError(f"truncated weights file: {exc}") from None
    if off != len(blob):
        raise WeightsFormatError("trailing bytes after weights")
    for (r0, c0), (r1, _) in zip(shapes[:-1], shapes[1:]):
        if c0 != r1:
            raise WeightsFormatError("inconsistent layer shapes")
    if shapes[0][0] != c + 2 * h + 1 or shapes[-1][1] != 2 * h:
        raise WeightsFormatError("layer shapes disagree with horizon/condition size")
    if cond_dim is not None and c != cond_dim:
        raise WeightsFormatError(f"condition size {c} does not match configured {cond_dim}")
    if horizon is not None and h != horizon:
        raise WeightsFormatError(f"horizon {h} does not match configured {horizon}")
    if hidden is not None and [s[1] for s in shapes[:-1]] != list(hidden):
        raise WeightsFormatError(f"hidden widths {[s[1] for s in shapes[:-1]]} do not match configured {list(hidden)}")

    net = PolicyNet.__new__(PolicyNet)
    net.cond_dim, net.horizon = c, h
    net.sizes = [shapes[0][0]] + [s[1] for s in shapes]
    net.weights, net.biases = weights, biases
    return net


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr=None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
