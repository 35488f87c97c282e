"""Single-track car model with throttle/steering-rate controls.

State ``(x, y, psi, v, D, delta)``, action ``(dD, ddelta)``. Integration is
classical RK4 with the throttle, steering angle and speed clamped to their
bounds after every full step.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numba import njit

STATE_DIM = 6
ACTION_DIM = 2


class DynamicsError(ArithmeticError):
    pass


class CarState(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v: float = 0.0
    D: float = 0.0
    delta: float = 0.0


class CarAction(NamedTuple):
    dD: float = 0.0
    ddelta: float = 0.0


@dataclass(frozen=True)
class CarParams:
    m: float = 0.2
    c1: float = 0.5
    c2: float = 15.0
    cm1: float = 10.0
    cm2: float = 1.0
    cr0: float = 0.5
    cr2: float = 0.05
    cr3: float = 5.0
    v_min: float = -1.0
    v_max: float = 3.0
    D_min: float = -1.0
    D_max: float = 1.0
    delta_min: float = -0.4
    delta_max: float = 0.4
    dD_max: float = 4.0
    ddelta_max: float = 2.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if not self.cr3 > 0:
            raise ValueError("cr3 must be positive")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        for lo, hi, label in (
            (self.v_min, self.v_max, "v"),
            (self.D_min, self.D_max, "D"),
            (self.delta_min, self.delta_max, "delta"),
            (-self.dD_max, self.dD_max, "dD"),
            (-self.ddelta_max, self.ddelta_max, "ddelta"),
        ):
            if not lo < hi:
                raise ValueError(f"degenerate bounds for {label}: [{lo}, {hi}]")

    @cached_property
    def packed(self) -> np.ndarray:
        arr = np.array(astuple(self)[:14], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-self.dD_max, -self.ddelta_max])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.dD_max, self.ddelta_max])


@njit(cache=True)
def _deriv(x, y, psi, v, D, delta, dD, dd, p):
    m, c1, c2, cm1, cm2, cr0, cr2, cr3 = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]
    fx = (cm1 - cm2 * v) * D - cr2 * v * v - cr0 * math.tanh(cr3 * v)
    heading = psi + c1 * delta
    return (
        v * math.cos(heading),
        v * math.sin(heading),
        v * c2 * delta,
        fx * math.cos(c1 * delta) / m,
        dD,
        dd,
    )


@njit(cache=True)
def _clip(val, lo, hi):
    if val < lo:
        return lo
    if val > hi:
        return hi
    return val


@njit(cache=True)
def _rk4(s, a, dt, p, out):
    x, y, psi, v, D, delta = s[0], s[1], s[2], s[3], s[4], s[5]
    dD, dd = a[0], a[1]
    h = 0.5 * dt
    k1 = _deriv(x, y, psi, v, D, delta, dD, dd, p)
    k2 = _deriv(x + h * k1[0], y + h * k1[1], psi + h * k1[2], v + h * k1[3],
                D + h * k1[4], delta + h * k1[5], dD, dd, p)
    k3 = _deriv(x + h * k2[0], y + h * k2[1], psi + h * k2[2], v + h * k2[3],
                D + h * k2[4], delta + h * k2[5], dD, dd, p)
    k4 = _deriv(x + dt * k3[0], y + dt * k3[1], psi + dt * k3[2], v + dt * k3[3],
                D + dt * k3[4], delta + dt * k3[5], dD, dd, p)
    w = dt / 6.0
    out[0] = x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    out[1] = y + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    out[2] = psi + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    out[3] = _clip(v + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]), p[8], p[9])
    out[4] = _clip(D + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4]), p[10], p[11])
    out[5] = _clip(delta + w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5]), p[12], p[13])


@njit(cache=True)
def _propagate(s0, actions, dt, p):
    n = actions.shape[0]
    out = np.empty((n + 1, 6))
    out[0, :] = s0
    for k in range(n):
        _rk4(out[k], actions[k], dt, p, out[k + 1])
    return out


def _as_state(s) -> np.ndarray:
    arr = np.asarray(s, dtype=np.float64)
    if arr.shape != (STATE_DIM,):
        raise ValueError(f"state must have {STATE_DIM} components, got shape {arr.shape}")
    return arr


def derivative(s, a, p: CarParams) -> CarState:
    s = _as_state(s)
    a = np.asarray(a, dtype=np.float64)
    if not (np.isfinite(s).all() and np.isfinite(a).all()):
        raise DynamicsError("non-finite state or action")
    return CarState(*_deriv(*s, a[0], a[1], p.packed))


def integrate_step(s, a, dt: float, p: CarParams) -> CarState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = _as_state(s)
    out = _propagate(s, np.asarray(a, dtype=np.float64).reshape(1, ACTION_DIM), float(dt), p.packed)
    if not np.isfinite(out[1]).all():
        raise DynamicsError(f"integration produced a non-finite state from {s.tolist()}")
    return CarState(*out[1].tolist())


def propagate(s0, actions, dt: float, p: CarParams) -> np.ndarray:
    """Roll ``actions`` forward from ``s0``; returns an (n+1, 6) state array."""
    actions = np.ascontiguousarray(actions, dtype=np.float64).reshape(-1, ACTION_DIM)
    if actions.shape[0] == 0:
        raise ValueError("need at least one action")
    if not dt > 0:
        raise ValueError("dt must be positive")
    s0 = _as_state(s0)
    out = _propagate(s0, actions, float(dt), p.packed)
    if not np.isfinite(out).all():
        raise DynamicsError("propagation produced a non-finite state")
    return out


def clamp_actions(actions, p: CarParams) -> np.ndarray:
    return np.clip(actions, p.action_low, p.action_high)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w
