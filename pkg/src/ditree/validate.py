"""Independent feasibility re-check of planner output.

Nothing here reuses the planner's propagation or collision kernels: every
recorded transition is re-integrated with a vectorized numpy RK4 and
obstacles are found through a k-d tree over occupied cell centers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import CarParams
from .workspace import OccupancyGrid, RobotGeometry

SIM_TOL = 1e-9


@dataclass
class Verdict:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _rates(s: np.ndarray, a: np.ndarray, p: CarParams) -> np.ndarray:
    x, y, psi, v, d, delta = s.T
    force = (p.cm1 - p.cm2 * v) * d - p.cr2 * v * v - p.cr0 * np.tanh(p.cr3 * v)
    return np.column_stack([
        v * np.cos(psi + p.c1 * delta),
        v * np.sin(psi + p.c1 * delta),
        v * p.c2 * delta,
        force * np.cos(p.c1 * delta) / p.m,
        a[:, 0],
        a[:, 1],
    ])


def step_all(states, actions, dt: float, params: CarParams) -> np.ndarray:
    """One classic RK4 step from every row of ``states`` (state box applied after the step)."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    a = np.atleast_2d(np.asarray(actions, dtype=float))
    k1 = _rates(s, a, params)
    k2 = _rates(s + 0.5 * dt * k1, a, params)
    k3 = _rates(s + 0.5 * dt * k2, a, params)
    k4 = _rates(s + dt * k3, a, params)
    out = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out[:, 3] = np.clip(out[:, 3], params.v_min, params.v_max)
    out[:, 4] = np.clip(out[:, 4], params.D_min, params.D_max)
    out[:, 5] = np.clip(out[:, 5], params.delta_min, params.delta_max)
    return out


class ObstacleOracle:
    """Exact sphere-versus-cell test via nearby occupied cells from a k-d tree."""

    def __init__(self, grid: OccupancyGrid):
        self.grid = grid
        iy, ix = np.nonzero(grid.occupancy)
        cs = grid.cell_size
        self.lo = np.column_stack([grid.origin[0] + ix * cs, grid.origin[1] + iy * cs])
        self.tree = cKDTree(self.lo + cs / 2.0) if len(ix) else None

    def disc_hits(self, centers: np.ndarray, radius: float) -> np.ndarray:
        g = self.grid
        x0, y0, x1, y1 = g.bounds
        cx, cy = centers[:, 0], centers[:, 1]
        hit = (cx - radius < x0) | (cx + radius > x1) | (cy - radius < y0) | (cy + radius > y1)
        if self.tree is None:
            return hit
        reach = radius + g.cell_size * math.sqrt(0.5) + 1e-9
        for i, near in enumerate(self.tree.query_ball_point(centers, reach)):
            if hit[i] or not near:
                continue
            lo = self.lo[near]
            q = np.clip(centers[i], lo, lo + g.cell_size)
            d2 = ((q - centers[i]) ** 2).sum(axis=1)
            hit[i] = bool((d2 <= radius * radius).any())
        return hit

    def states_hit(self, states: np.ndarray, geom: RobotGeometry) -> np.ndarray:
        states = np.atleast_2d(states)
        c, s = np.cos(states[:, 2]), np.sin(states[:, 2])
        hit = np.zeros(len(states), dtype=bool)
        for ox, oy, r in geom.spheres:
            centers = np.column_stack([states[:, 0] + c * ox - s * oy, states[:, 1] + s * ox + c * oy])
            hit |= self.disc_hits(centers, r)
        return hit


def validate_solution(states, actions, start, goal, goal_radius: float, grid: OccupancyGrid,
                      geom: RobotGeometry, params: CarParams, dt: float, tol: float = SIM_TOL,
                      oracle: ObstacleOracle | None = None) -> Verdict:
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float).reshape(-1, 2)
    if states.ndim != 2 or states.shape[1] != 6 or len(states) != len(actions) + 1:
        return Verdict(False, "trajectory arrays have inconsistent shapes")
    if not (np.isfinite(states).all() and np.isfinite(actions).all()):
        return Verdict(False, "non-finite values in trajectory")
    if np.abs(states[0] - np.asarray(start, dtype=float)).max() > tol:
        return Verdict(False, "trajectory does not begin at the query start")
    if (actions < params.action_low - 1e-12).any() or (actions > params.action_high + 1e-12).any():
        return Verdict(False, "action outside the control box")
    if len(actions):
        # every transition is re-integrated from its recorded predecessor
        sim = step_all(states[:-1], actions, dt, params)
        nxt = states[1:]
        err = np.abs(sim - nxt)
        err[:, 2] = np.abs(np.angle(np.exp(1j * (sim[:, 2] - nxt[:, 2]))))
        rel = (err / np.maximum(1.0, np.abs(sim))).max(axis=1)
        if rel.max() > tol:
            return Verdict(False, f"re-simulation disagrees at step {int(np.argmax(rel)) + 1}")
    lo = np.array([params.v_min, params.D_min, params.delta_min]) - 1e-12
    hi = np.array([params.v_max, params.D_max, params.delta_max]) + 1e-12
    if ((states[:, 3:] < lo) | (states[:, 3:] > hi)).any():
        return Verdict(False, "state outside its bounds")
    oracle = oracle or ObstacleOracle(grid)
    hits = oracle.states_hit(states, geom)
    if hits.any():
        return Verdict(False, f"collision at step {int(np.argmax(hits))}")
    if math.hypot(states[-1, 0] - goal[0], states[-1, 1] - goal[1]) > goal_radius + 1e-12:
        return Verdict(False, "final state outside the goal disc")
    return Verdict(True)
