"""Exact nearest-vertex lookup under the weighted, heading-wrapped state metric.

    d(a, b)^2 = w_xy*(dx^2 + dy^2) + w_psi*wrap(dpsi)^2 + w_v*dv^2

Vertices are embedded as ``(sqrt(w_xy)x, sqrt(w_xy)y, sqrt(w_psi)psi, sqrt(w_v)v)``
with psi wrapped to (-pi, pi]. For such headings the wrapped difference is the
smallest of the three plain differences with the query shifted by 0 and
+-2pi, so three Euclidean k-d queries give the exact answer. Recent
insertions live in a linear-scan buffer until the tree is rebuilt.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * math.pi


def wrap(a):
    return np.pi - np.mod(np.pi - a, TWO_PI)


def metric_sq(states: np.ndarray, q, weights) -> np.ndarray:
    """Squared distance from each row of ``states`` (..., >=4) to ``q``."""
    w_xy, w_psi, w_v = weights
    dx = states[..., 0] - q[0]
    dy = states[..., 1] - q[1]
    dpsi = wrap(states[..., 2] - q[2])
    dv = states[..., 3] - q[3]
    return w_xy * (dx * dx + dy * dy) + w_psi * (dpsi * dpsi) + w_v * (dv * dv)


def linear_nearest(states: np.ndarray, q, weights) -> int:
    """Reference answer: full scan, ties to the smallest index."""
    d = metric_sq(np.asarray(states), q, weights)
    return int(np.argmin(d))


class NearestIndex:
    def __init__(self, weights=(1.0, 0.5, 0.1), linear_limit: int = 4096, capacity: int = 1024):
        w_xy, w_psi, w_v = (float(w) for w in weights)
        if w_xy <= 0 or w_psi < 0 or w_v < 0:
            raise ValueError("metric weights must be >= 0 with w_xy > 0")
        self.weights = (w_xy, w_psi, w_v)
        self._scale = np.sqrt([w_xy, w_xy, w_psi, w_v])
        self.linear_limit = linear_limit
        self._raw = np.empty((capacity, 4))
        self._emb = np.empty((capacity, 4))
        self.size = 0
        self._tree: cKDTree | None = None
        self._tree_n = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state) -> int:
        if self.size == self._raw.shape[0]:
            self._raw = np.concatenate([self._raw, np.empty_like(self._raw)])
            self._emb = np.concatenate([self._emb, np.empty_like(self._emb)])
        i = self.size
        row = self._raw[i]
        row[0], row[1], row[3] = state[0], state[1], state[3]
        row[2] = wrap(float(state[2]))
        self._emb[i] = row * self._scale
        self.size += 1
        if self.size > self.linear_limit and self.size - self._tree_n > max(256, self._tree_n // 4):
            self._tree = cKDTree(self._emb[: self.size].copy(), leafsize=32)
            self._tree_n = self.size
        return i

    def nearest(self, q) -> int:
        if self.size == 0:
            raise LookupError("nearest() on an empty index")
        q = np.array([q[0], q[1], wrap(float(q[2])), q[3]], dtype=float)
        if self._tree is None:
            return linear_nearest(self._raw[: self.size], q, self.weights)

        n = self._tree_n
        cand = []
        qe = q * self._scale
        shifts = (0.0, TWO_PI, -TWO_PI) if self.weights[1] > 0 else (0.0,)
        for sh in shifts:
            qs = qe.copy()
            qs[2] = (q[2] + sh) * self._scale[2]
            _, j = self._tree.query(qs)
            cand.append(int(j))
        best_d = metric_sq(self._raw[cand], q, self.weights).min()
        # collect every tree point that could tie or beat the provisional best
        radius = math.sqrt(best_d) * (1 + 1e-9) + 1e-12
        for sh in shifts:
            qs = qe.copy()
            qs[2] = (q[2] + sh) * self._scale[2]
            cand.extend(self._tree.query_ball_point(qs, radius))
        cand = np.unique(np.asarray(cand, dtype=np.int64))
        d = metric_sq(self._raw[cand], q, self.weights)
        k = int(np.argmin(d))
        best_i, best_d = int(cand[k]), d[k]
        if self.size > n:
            tail = metric_sq(self._raw[n : self.size], q, self.weights)
            j = int(np.argmin(tail))
            if tail[j] < best_d:
                best_i = n + j
        return best_i
