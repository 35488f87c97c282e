"""Tree-edge action sampler driven by the flow-matching policy."""
from __future__ import annotations

import numpy as np

from ..dynamics import CarParams, propagate
from ..workspace import OccupancyGrid, RobotGeometry, first_collision
from .conditioning import ObservationSpec, condition_for
from .flow import ActionScaler, SampleConfig, sample_actions
from .network import PolicyNet


class DiffusionEdgeSampler:
    """Builds an N-action edge in H-action chunks, re-observing after each chunk.

    The conditioning target is chosen once per edge: the planner's random
    state with probability ``dgb``, the query goal otherwise. With ``geom``
    set, generation stops after the first chunk that collides or enters the
    goal disc; the planner would reject or truncate the edge at that point
    anyway.
    """

    def __init__(self, net: PolicyNet, grid: OccupancyGrid, goal, params: CarParams,
                 cfg: SampleConfig, spec: ObservationSpec, dt: float = 0.1,
                 geom: RobotGeometry | None = None, goal_radius: float | None = None,
                 scaler: ActionScaler | None = None):
        if spec.cond_dim != net.cond_dim:
            raise ValueError(f"observation spec gives {spec.cond_dim} condition entries, network expects {net.cond_dim}")
        self.net = net
        self.grid = grid
        self.goal = (float(goal[0]), float(goal[1]))
        self.params = params
        self.cfg = cfg
        self.spec = spec
        self.dt = dt
        self.geom = geom
        self.goal_r2 = None if goal_radius is None else goal_radius ** 2
        self.scaler = scaler or ActionScaler(params)
        self.target_counts = {"goal": 0, "random": 0}
        self.inferences = 0

    @property
    def horizon(self) -> int:
        return self.net.horizon

    def __call__(self, x_near, x_rand, n_actions: int, rng: np.random.Generator):
        h = self.horizon
        if n_actions % h:
            raise ValueError(f"edge length {n_actions} is not a multiple of the policy horizon {h}")
        if rng.random() < self.cfg.dgb:
            target = (float(x_rand[0]), float(x_rand[1]))
            self.target_counts["random"] += 1
        else:
            target = self.goal
            self.target_counts["goal"] += 1
        return self.rollout(x_near, target, n_actions // h, rng)

    def rollout(self, start, target, n_chunks: int, rng: np.random.Generator):
        state = np.asarray(start, dtype=float)
        actions = []
        states = [state[None, :]]
        for _ in range(n_chunks):
            cond = condition_for(self.grid, state, target, self.spec, self.params)
            self.inferences += 1
            chunk = sample_actions(self.net, cond, self.cfg, rng, self.scaler)
            seg = propagate(state, chunk, self.dt, self.params)
            actions.append(chunk)
            states.append(seg[1:])
            state = seg[-1]
            if self.geom is not None:
                if first_collision(self.grid, self.geom, seg[1:]) >= 0:
                    break
                if self.goal_r2 is not None:
                    d2 = (seg[:, 0] - self.goal[0]) ** 2 + (seg[:, 1] - self.goal[1]) ** 2
                    if (d2 <= self.goal_r2).any():
                        break
        return np.concatenate(actions), np.concatenate(states)


def diffusion_edge_sampler(x_near, x_rand, goal, grid, n_actions, cfg: SampleConfig, rng,
                           net: PolicyNet, params: CarParams | None = None,
                           spec: ObservationSpec | None = None, dt: float = 0.1,
                           scaler: ActionScaler | None = None):
    sampler = DiffusionEdgeSampler(net, grid, goal, params or CarParams(), cfg, spec or ObservationSpec(), dt,
                                   scaler=scaler)
    return sampler(x_near, x_rand, n_actions, rng)
