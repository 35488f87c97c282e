"""Sampling-based kinodynamic tree planner with a pluggable action sampler.

The loop is the classic RRT blueprint: draw a target state, select the
nearest vertex, ask the sampler for an action sequence, forward-propagate it
and keep the edge only if every integrated substate is collision-free.
"""
from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .dynamics import CarParams, propagate
from .nearest import NearestIndex
from .workspace import OccupancyGrid, RobotGeometry, first_collision, is_state_free

PROP_MODES = ("fixed", "random", "scheduled")
SCHEDULE = (128, 96, 64)


class InvalidQuery(ValueError):
    pass


class Status(str, enum.Enum):
    SOLVED = "Solved"
    TIMEOUT = "Timeout"
    ITERATION_LIMIT = "IterationLimit"


@dataclass
class PlannerConfig:
    time_budget: float = 30.0
    max_iterations: int = 1_000_000
    goal_bias: float = 0.05
    n_actions: int = 64
    prop_mode: str = "fixed"
    dt: float = 0.1
    w_xy: float = 1.0
    w_psi: float = 0.5
    w_v: float = 0.1
    position_only: bool = False
    goal_radius: float = 1.0
    rng_seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if not (self.time_budget > 0 and self.max_iterations > 0):
            raise ValueError("budgets must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        if self.prop_mode not in PROP_MODES:
            raise ValueError(f"prop_mode must be one of {PROP_MODES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.w_xy <= 0 or self.w_psi < 0 or self.w_v < 0:
            raise ValueError("metric weights must be >= 0 with w_xy > 0")
        if not self.goal_radius > 0:
            raise ValueError("goal_radius must be positive")

    @property
    def weights(self) -> tuple[float, float, float]:
        if self.position_only:
            return (self.w_xy, 0.0, 0.0)
        return (self.w_xy, self.w_psi, self.w_v)


@dataclass(frozen=True)
class Query:
    start: tuple
    goal: tuple[float, float]
    goal_radius: float = 1.0


@dataclass
class PlanStats:
    iterations: int = 0
    vertices: int = 1
    collision_checks: int = 0
    sampler_calls: int = 0
    wall_time: float = 0.0


@dataclass
class PlanResult:
    status: Status
    states: np.ndarray | None = None
    actions: np.ndarray | None = None
    stats: PlanStats = field(default_factory=PlanStats)
    tree: "PlanTree | None" = None

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED

    def path_length(self) -> float:
        if self.states is None or len(self.states) < 2:
            return 0.0
        return float(np.hypot(*np.diff(self.states[:, :2], axis=0).T).sum())

    def to_dict(self, include_tree: bool = False) -> dict:
        out = {"status": self.status.value, "stats": asdict(self.stats)}
        if self.states is not None:
            out["states"] = self.states.tolist()
            out["actions"] = self.actions.tolist()
        if include_tree and self.tree is not None:
            out["tree"] = {
                "parents": self.tree.parents,
                "edges": [e[:, :3].tolist() if e is not None else None for e in self.tree.edge_states],
            }
        return out

    def save(self, path, include_tree: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_tree)), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "PlanResult":
        states = np.asarray(d["states"], dtype=float) if "states" in d else None
        actions = np.asarray(d["actions"], dtype=float).reshape(-1, 2) if "actions" in d else None
        res = cls(Status(d["status"]), states, actions, PlanStats(**d["stats"]))
        if "tree" in d:
            res.tree = TreeSketch(d["tree"]["parents"], [None if e is None else np.asarray(e) for e in d["tree"]["edges"]])
        return res

    @classmethod
    def load(cls, path) -> "PlanResult":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TreeSketch:
    """Tree topology and edge polylines as read back from a result file."""

    parents: list
    edge_states: list

    def __len__(self) -> int:
        return len(self.parents)


class PlanTree:
    """Vertices, parent links and the integrated edge that produced each vertex."""

    def __init__(self, start, weights=(1.0, 0.5, 0.1)):
        start = np.asarray(start, dtype=float)
        self.states: list[np.ndarray] = [start]
        self.parents: list[int | None] = [None]
        self.edge_actions: list[np.ndarray | None] = [None]
        self.edge_states: list[np.ndarray | None] = [None]
        self.times: list[float] = [0.0]
        self.visits: list[int] = [0]
        self.index = NearestIndex(weights)
        self.index.add(start)

    def __len__(self) -> int:
        return len(self.states)

    def add(self, parent: int, actions: np.ndarray, states: np.ndarray, dt: float) -> int:
        if not 0 <= parent < len(self.states):
            raise IndexError(f"unknown parent vertex {parent}")
        vid = len(self.states)
        self.states.append(states[-1])
        self.parents.append(parent)
        self.edge_actions.append(actions)
        self.edge_states.append(states)
        self.times.append(self.times[parent] + len(actions) * dt)
        self.visits.append(0)
        self.index.add(states[-1])
        return vid

    def nearest(self, target) -> int:
        return self.index.nearest(target)


def nearest(tree: PlanTree, x_rand, weights=None) -> int:
    if weights is not None and tuple(weights) != tree.index.weights:
        from .nearest import linear_nearest

        return linear_nearest(np.asarray(tree.states), x_rand, weights)
    return tree.nearest(x_rand)


def extract_trajectory(tree: PlanTree, leaf: int) -> tuple[np.ndarray, np.ndarray]:
    """States and actions along the root-to-``leaf`` path, shared endpoints merged."""
    if not 0 <= leaf < len(tree):
        raise IndexError(f"unknown vertex {leaf}")
    chain = []
    v = leaf
    while v is not None:
        chain.append(v)
        v = tree.parents[v]
    chain.reverse()
    states = [tree.states[0][None, :]]
    actions = [np.zeros((0, 2))]
    for v in chain[1:]:
        states.append(tree.edge_states[v][1:])
        actions.append(tree.edge_actions[v])
    return np.concatenate(states), np.concatenate(actions)


def sample_state(grid: OccupancyGrid, goal, goal_bias: float, rng: np.random.Generator, v_bounds=(-1.0, 3.0)) -> np.ndarray:
    """RRT target: the goal lifted to a state with probability ``goal_bias``, else uniform."""
    if rng.random() < goal_bias:
        return np.array([goal[0], goal[1], 0.0, 0.0, 0.0, 0.0])
    x0, y0, x1, y1 = grid.bounds
    x = rng.uniform(x0, x1)
    y = rng.uniform(y0, y1)
    psi = math.pi - rng.uniform(0.0, 2 * math.pi)  # (-pi, pi]
    v = rng.uniform(*v_bounds)
    return np.array([x, y, psi, v, 0.0, 0.0])


class ActionSampler(Protocol):
    def __call__(self, x_near: np.ndarray, x_rand: np.ndarray, n_actions: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
        """Return an (n, 2) action array and, optionally, the (n+1, 6) states it induces."""


def uniform_sampler(x_near, target, grid, n_actions: int, rng: np.random.Generator, params: CarParams) -> np.ndarray:
    """One control drawn uniformly from the action box, held for the whole edge."""
    u = rng.uniform(params.action_low, params.action_high)
    return np.tile(u, (n_actions, 1))


class UniformSampler:
    def __init__(self, grid: OccupancyGrid, params: CarParams):
        self.grid = grid
        self.params = params

    def __call__(self, x_near, x_rand, n_actions, rng):
        return uniform_sampler(x_near, x_rand, self.grid, n_actions, rng, self.params), None


def edge_length(cfg: PlannerConfig, visits: int, rng: np.random.Generator, multiple: int = 16) -> int:
    if cfg.prop_mode == "fixed":
        return cfg.n_actions
    if cfg.prop_mode == "random":
        lo, hi = 32 // multiple, 128 // multiple
        return int(rng.integers(lo, hi + 1)) * multiple
    return SCHEDULE[min(visits, len(SCHEDULE) - 1)]


def plan(query: Query, grid: OccupancyGrid, geom: RobotGeometry, sampler: ActionSampler,
         config: PlannerConfig, params: CarParams | None = None,
         clock: Callable[[], float] = time.perf_counter) -> PlanResult:
    params = params or CarParams()
    t0 = clock()
    start = np.asarray(query.start, dtype=float)
    if not is_state_free(grid, geom, start):
        raise InvalidQuery("start state is in collision")
    gx, gy = float(query.goal[0]), float(query.goal[1])
    r2 = query.goal_radius ** 2
    rng = np.random.default_rng(config.rng_seed)
    tree = PlanTree(start, config.weights)
    stats = PlanStats()

    def done(status, leaf=None):
        stats.vertices = len(tree)
        stats.wall_time = clock() - t0
        if leaf is None:
            return PlanResult(status, stats=stats, tree=tree)
        states, actions = extract_trajectory(tree, leaf)
        return PlanResult(status, states, actions, stats, tree)

    if (start[0] - gx) ** 2 + (start[1] - gy) ** 2 <= r2:
        return done(Status.SOLVED, 0)

    v_bounds = (params.v_min, params.v_max)
    goal_state = (gx, gy)
    for it in range(config.max_iterations):
        if not config.deterministic and clock() - t0 > config.time_budget:
            return done(Status.TIMEOUT)
        stats.iterations = it + 1
        x_rand = sample_state(grid, goal_state, config.goal_bias, rng, v_bounds)
        near = tree.nearest(x_rand)
        n = edge_length(config, tree.visits[near], rng)
        tree.visits[near] += 1
        x_near = tree.states[near]
        actions, states = sampler(x_near, x_rand, n, rng)
        stats.sampler_calls += 1
        if states is None:
            states = propagate(x_near, actions, config.dt, params)

        d2 = (states[:, 0] - gx) ** 2 + (states[:, 1] - gy) ** 2
        hits = np.flatnonzero(d2 <= r2)
        reached = hits.size > 0
        if reached:
            k = int(hits[0])
            states = states[: k + 1]
            actions = actions[:k]
            if k == 0:
                continue
        blocked = first_collision(grid, geom, states[1:])
        stats.collision_checks += (len(states) - 1) if blocked < 0 else blocked + 1
        if blocked >= 0:
            continue
        vid = tree.add(near, np.ascontiguousarray(actions), states, config.dt)
        if reached:
            return done(Status.SOLVED, vid)
    return done(Status.ITERATION_LIMIT)
