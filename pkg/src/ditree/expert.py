"""Expert demonstrations: grid A*, a pure-pursuit/PD tracker and window filtering."""
from __future__ import annotations

import heapq
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import CarParams, propagate
from .workspace import OccupancyGrid, RobotGeometry, inflate, states_free

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
MAGIC = b"DKD1"
_NEIGHBORS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


class DataGenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class ExpertConfig:
    inflation: float = 0.5
    lookahead: float = 0.8
    speed: float = 1.0
    slowdown_dist: float = 1.0
    min_speed: float = 0.3
    kp_speed: float = 0.1
    kd_speed: float = 0.1
    kp_steer: float = 5.0
    kd_steer: float = 0.0
    goal_tolerance: float = 0.3
    max_steps_factor: float = 4.0
    min_query_distance: float = 3.0
    clearance: float = 0.15
    horizon: int = 16
    stride: int = 4
    action_quantile: float = 99.0


@dataclass
class ExpertTrajectory:
    map_id: str
    goal: tuple[float, float]
    states: np.ndarray
    actions: np.ndarray
    dt: float

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass
class Dataset:
    trajectories: list[ExpertTrajectory]
    action_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    action_scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    seed: int = 0
    stats: dict = field(default_factory=dict)  # generation counts, not stored in the file

    def __len__(self) -> int:
        return len(self.trajectories)


def octile(a, b) -> float:
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def astar(grid: OccupancyGrid, start_cell, goal_cell):
    """8-connected A* without corner cutting; returns a list of (ix, iy) or None."""
    start = (int(start_cell[0]), int(start_cell[1]))
    goal = (int(goal_cell[0]), int(goal_cell[1]))
    if grid.is_occupied(*start) or grid.is_occupied(*goal):
        return None
    occ = grid.occupancy
    w, h = grid.width_cells, grid.height_cells
    g = {start: 0.0}
    parent = {start: None}
    closed = set()
    tie = 0
    heap = [(octile(start, goal), 0.0, tie, start)]
    while heap:
        _, gc, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return path[::-1]
        closed.add(cur)
        cx, cy = cur
        for dx, dy in _NEIGHBORS:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < w and 0 <= ny < h) or occ[ny, nx]:
                continue
            if dx and dy and (occ[cy, nx] or occ[ny, cx]):
                continue
            nxt = (nx, ny)
            if nxt in closed:
                continue
            ng = gc + (SQRT2 if dx and dy else 1.0)
            if ng < g.get(nxt, math.inf):
                g[nxt] = ng
                parent[nxt] = cur
                tie += 1
                heapq.heappush(heap, (ng + octile(nxt, goal), ng, tie, nxt))
    return None


def path_cost(path) -> float:
    return sum(SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0 for a, b in zip(path, path[1:]))


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


class _Polyline:
    def __init__(self, pts: np.ndarray):
        self.pts = pts
        seg = np.diff(pts, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def project(self, p, lo: int) -> tuple[int, float]:
        """Closest arc-length position at or after segment ``lo`` (small forward window)."""
        best = (lo, self.cum[lo], math.inf)
        for i in range(lo, min(lo + 6, len(self.seg_len))):
            a = self.pts[i]
            d = self.pts[i + 1] - a
            L2 = float(d @ d)
            t = 0.0 if L2 == 0 else min(1.0, max(0.0, float((p - a) @ d) / L2))
            q = a + t * d
            dist = float(np.hypot(*(p - q)))
            if dist < best[2]:
                best = (i, self.cum[i] + t * self.seg_len[i], dist)
        return best[0], best[1]

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.seg_len) - 1)
        if self.seg_len[i] == 0:
            return self.pts[i].copy()
        t = (s - self.cum[i]) / self.seg_len[i]
        return self.pts[i] + t * (self.pts[i + 1] - self.pts[i])


def track_path(cell_path, grid: OccupancyGrid, geom: RobotGeometry, params: CarParams,
               cfg: ExpertConfig | None = None, dt: float = 0.1, map_id: str = "") -> ExpertTrajectory | None:
    """Drive the car along a cell path with pure pursuit plus PD rate loops.

    Returns ``None`` when the car collides or runs out of steps. Actions and
    every simulated state are rounded to float32 after each step, so the
    trajectory survives the dataset file exactly (see :func:`replay_states`).
    """
    cfg = cfg or ExpertConfig()
    pts = np.array([grid.cell_center(ix, iy) for ix, iy in cell_path], dtype=float)
    goal = (float(pts[-1, 0]), float(pts[-1, 1]))
    dt = float(_f32(dt))
    if len(pts) == 1:
        start = _f32([pts[0, 0], pts[0, 1], 0.0, 0.0, 0.0, 0.0])
        if not states_free(grid, geom, start[None, :])[0]:
            return None
        return ExpertTrajectory(map_id, goal, start[None, :], np.zeros((0, 2)), dt)

    line = _Polyline(pts)
    psi0 = math.atan2(pts[1, 1] - pts[0, 1], pts[1, 0] - pts[0, 0])
    state = _f32([pts[0, 0], pts[0, 1], psi0, 0.0, 0.0, 0.0])
    if not states_free(grid, geom, state[None, :])[0]:
        return None
    states = [state]
    actions = []
    max_steps = int(cfg.max_steps_factor * (line.length / cfg.speed) / dt) + 50
    seg = 0
    e_v_prev = e_d_prev = None
    lo_a, hi_a = params.action_low, params.action_high
    for _ in range(max_steps):
        x, y, psi, v, _, delta = state
        pos = np.array([x, y])
        if math.hypot(x - goal[0], y - goal[1]) <= cfg.goal_tolerance:
            break
        seg, s = line.project(pos, seg)
        target = line.point_at(s + cfg.lookahead)
        heading = psi + params.c1 * delta
        alpha = math.atan2(target[1] - y, target[0] - x) - heading
        alpha = math.atan2(math.sin(alpha), math.cos(alpha))
        dist = max(float(np.hypot(*(target - pos))), 1e-6)
        kappa = 2.0 * math.sin(alpha) / dist
        delta_set = min(max(kappa / params.c2, params.delta_min), params.delta_max)
        remaining = line.length - s
        v_set = max(cfg.min_speed, min(cfg.speed, cfg.speed * remaining / cfg.slowdown_dist))

        e_d = delta_set - delta
        e_v = v_set - v
        d_e_d = 0.0 if e_d_prev is None else (e_d - e_d_prev) / dt
        d_e_v = 0.0 if e_v_prev is None else (e_v - e_v_prev) / dt
        e_d_prev, e_v_prev = e_d, e_v
        a = np.array([cfg.kp_speed * e_v + cfg.kd_speed * d_e_v, cfg.kp_steer * e_d + cfg.kd_steer * d_e_d])
        a = _f32(np.clip(a, lo_a, hi_a))
        nxt = _f32(propagate(state, a[None, :], dt, params)[1])
        if not states_free(grid, geom, nxt[None, :])[0]:
            return None
        actions.append(a)
        states.append(nxt)
        state = nxt
    else:
        return None
    return ExpertTrajectory(map_id, goal, np.array(states), np.array(actions).reshape(-1, 2), dt)


def replay_states(tr: ExpertTrajectory, params: CarParams) -> np.ndarray:
    """Re-simulate a stored trajectory one action at a time from float32 states.

    Stored trajectories are produced exactly this way, so a faithful file
    gives back ``tr.states`` bit for bit.
    """
    out = np.empty_like(tr.states)
    out[0] = tr.states[0]
    for k, a in enumerate(tr.actions):
        out[k + 1] = _f32(propagate(tr.states[k], a[None, :], tr.dt, params)[1])
    return out


def window_starts(n_actions: int, horizon: int, stride: int) -> range:
    return range(0, n_actions - horizon + 1, stride)


def filter_dataset(trajs, clearance: float, grid: OccupancyGrid, geom: RobotGeometry,
                   horizon: int = 16, stride: int = 4) -> list[ExpertTrajectory]:
    """Drop training windows whose start state is within ``clearance`` of an obstacle.

    Each trajectory is cut into segments made of consecutive surviving
    windows; segments keep the original states, so they replay exactly.
    Segments shorter than ``horizon + 1`` states are dropped.
    """
    if clearance < 0:
        raise ValueError("clearance must be non-negative")
    probe = geom.inflated(clearance) if clearance > 0 else geom
    out = []
    for tr in trajs:
        starts = list(window_starts(tr.n_actions, horizon, stride))
        if not starts:
            continue
        ok = states_free(grid, probe, tr.states[starts])
        runs = []
        run = None
        for k, good in zip(starts, ok):
            if good:
                run = [k, k] if run is None else [run[0], k]
            elif run is not None:
                runs.append(run)
                run = None
        if run is not None:
            runs.append(run)
        for a, b in runs:
            end = tr.n_actions if b == starts[-1] else b + horizon
            out.append(ExpertTrajectory(tr.map_id, tr.goal, tr.states[a : end + 1], tr.actions[a:end], tr.dt))
    return out


def map_id_for(grid: OccupancyGrid) -> str:
    return f"{grid.name or 'map'}:{grid.digest[:16]}"


def generate_dataset(grid: OccupancyGrid, n_queries: int, seed: int, cfg: ExpertConfig | None = None,
                     geom: RobotGeometry | None = None, params: CarParams | None = None,
                     dt: float = 0.1) -> Dataset:
    """Random start/goal queries solved by A* and tracked into expert trajectories."""
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    cfg = cfg or ExpertConfig()
    geom = geom or RobotGeometry()
    params = params or CarParams()
    cspace = inflate(grid, cfg.inflation)
    free = np.argwhere(~cspace.occupancy)  # rows of (iy, ix)
    if len(free) < 2:
        raise DataGenerationError("map has no free cells after inflating by the robot clearance")
    rng = np.random.default_rng(seed)
    mid = map_id_for(grid)
    trajs = []
    failures = {"no_path": 0, "tracking": 0, "too_close": 0}
    min_cells = cfg.min_query_distance / grid.cell_size
    for _ in range(n_queries):
        i, j = rng.choice(len(free), size=2, replace=False)
        s = (int(free[i][1]), int(free[i][0]))
        g = (int(free[j][1]), int(free[j][0]))
        if math.hypot(s[0] - g[0], s[1] - g[1]) < min_cells:
            failures["too_close"] += 1
            continue
        path = astar(cspace, s, g)
        if path is None:
            failures["no_path"] += 1
            continue
        tr = track_path(path, grid, geom, params, cfg, dt, mid)
        if tr is None:
            failures["tracking"] += 1
            continue
        trajs.append(tr)
    if not trajs:
        raise DataGenerationError(f"no successful expert trajectories out of {n_queries} queries: {failures}")
    log.info("expert queries: %d ok, failures %s", len(trajs), failures)
    kept = filter_dataset(trajs, cfg.clearance, grid, geom, cfg.horizon, cfg.stride)
    if not kept:
        raise DataGenerationError("clearance filtering removed every training window")
    offset, scale = action_normalization(np.concatenate([tr.actions for tr in kept]), params, cfg.action_quantile)
    return Dataset(kept, offset, scale, seed, {"queries": n_queries, "tracked": len(trajs), **failures})


def action_normalization(actions: np.ndarray, params: CarParams, quantile: float = 99.0):
    """Zero offsets and per-component scales from a high quantile of ``|action|``.

    Expert actions concentrate near zero with rare large transients; scaling
    by the quantile (rather than the control box or the extreme values) lets
    the bulk of the data fill the normalized range. Windows built for
    training clip the few entries beyond it. Symmetric scales keep
    left/right mirroring valid.
    """
    scale = np.percentile(np.abs(actions), quantile, axis=0)
    box = (params.action_high - params.action_low) / 2.0
    scale = np.maximum(scale, 1e-3 * box)
    # rounded so the values written to the dataset file are the ones in use
    return np.zeros(2), _f32(scale)


def dump_dataset(ds: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(ds.trajectories)))
    for tr in ds.trajectories:
        mid = tr.map_id.encode("utf-8")
        buf.write(struct.pack("<I", len(mid)))
        buf.write(mid)
        buf.write(struct.pack("<fff", tr.goal[0], tr.goal[1], tr.dt))
        buf.write(struct.pack("<I", tr.n_actions))
        buf.write(np.ascontiguousarray(tr.states, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(tr.actions, dtype="<f4").tobytes())
    norm = np.column_stack([ds.action_offset, ds.action_scale]).astype("<f4")
    buf.write(norm.tobytes())
    buf.write(struct.pack("<Q", ds.seed))
    return buf.getvalue()


def load_dataset(blob: bytes) -> Dataset:
    if blob[:4] != MAGIC:
        raise DatasetFormatError("bad magic, not a dataset file")
    try:
        (count,) = struct.unpack_from("<I", blob, 4)
        off = 8
        trajs = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, off)
            off += 4
            mid = blob[off : off + n].decode("utf-8")
            off += n
            gx, gy, dt = struct.unpack_from("<fff", blob, off)
            off += 12
            (t,) = struct.unpack_from("<I", blob, off)
            off += 4
            states = np.frombuffer(blob, "<f4", 6 * (t + 1), off).reshape(t + 1, 6).astype(np.float64)
            off += 24 * (t + 1)
            actions = np.frombuffer(blob, "<f4", 2 * t, off).reshape(t, 2).astype(np.float64)
            off += 8 * t
            trajs.append(ExpertTrajectory(mid, (gx, gy), states, actions, dt))
        norm = np.frombuffer(blob, "<f4", 4, off).reshape(2, 2).astype(np.float64)
        off += 16
        (seed,) = struct.unpack_from("<Q", blob, off)
        off += 8
    except (struct.error, ValueError) as exc:
        raise DatasetFormatError(f"truncated dataset file: {exc}") from None
    if off != len(blob):
        raise DatasetFormatError("trailing bytes after dataset footer")
    return Dataset(trajs, norm[:, 0].copy(), norm[:, 1].copy(), int(seed))


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dump_dataset(ds))


def read_dataset(path) -> Dataset:
    return load_dataset(Path(path).read_bytes())
