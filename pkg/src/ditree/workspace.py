"""Occupancy grids, sphere-set collision checking and local observation patches."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit

Pose = tuple[float, float, float]

MAP_CHARS = frozenset("#.SG")


class MapParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean obstacle map.

    ``occupancy[iy, ix]`` is True for an obstacle; ``iy`` grows with world y,
    so row 0 is the bottom of the map.
    """

    occupancy: np.ndarray
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    start_hint: tuple[int, int] | None = None
    goal_hint: tuple[int, int] | None = None
    name: str = ""

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ValueError(f"occupancy must be a non-empty 2D array, got shape {occ.shape}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def width_cells(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height_cells(self) -> int:
        return self.occupancy.shape[0]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) in meters."""
        x0, y0 = self.origin
        return (x0, y0, x0 + self.width_cells * self.cell_size, y0 + self.height_cells * self.cell_size)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            math.floor((x - self.origin[0]) / self.cell_size),
            math.floor((y - self.origin[1]) / self.cell_size),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.cell_size,
            self.origin[1] + (iy + 0.5) * self.cell_size,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width_cells and 0 <= iy < self.height_cells

    def is_occupied(self, ix: int, iy: int) -> bool:
        if not self.in_bounds(ix, iy):
            return True
        return bool(self.occupancy[iy, ix])

    def occupied_at(self, x: float, y: float) -> bool:
        return self.is_occupied(*self.cell_of(x, y))

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.occupancy.shape, dtype="<u4").tobytes())
        h.update(np.asarray([self.cell_size, *self.origin], dtype="<f8").tobytes())
        h.update(np.packbits(self.occupancy).tobytes())
        return h.hexdigest()

    @cached_property
    def _padded(self) -> np.ndarray:
        # border of occupied cells so neighbourhood lookups never index out of range
        return np.pad(self.occupancy, _PAD, constant_values=True)


_PAD = 2


def load_map(text: str, name: str = "") -> OccupancyGrid:
    """Parse the ASCII map format.

    Line 1 is ``cell_size <meters>``, an optional ``origin <x> <y>`` line may
    follow, then the rows of the grid, top row first.
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError("line 1: empty map file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "cell_size":
        raise MapParseError("line 1: expected 'cell_size <float>'")
    try:
        cell_size = float(head[1])
    except ValueError:
        raise MapParseError(f"line 1: invalid cell size {head[1]!r}") from None
    if not (cell_size > 0 and math.isfinite(cell_size)):
        raise MapParseError("line 1: cell size must be positive")

    origin = (0.0, 0.0)
    first_row = 1
    if len(lines) > 1 and lines[1].startswith("origin"):
        parts = lines[1].split()
        try:
            if len(parts) != 3:
                raise ValueError
            origin = (float(parts[1]), float(parts[2]))
        except ValueError:
            raise MapParseError("line 2: expected 'origin <x> <y>'") from None
        first_row = 2

    rows = [ln.rstrip("\r") for ln in lines[first_row:]]
    if not rows:
        raise MapParseError(f"line {first_row + 1}: no grid rows")
    width = len(rows[0])
    if width == 0:
        raise MapParseError(f"line {first_row + 1}: empty row")
    for k, row in enumerate(rows):
        lineno = first_row + k + 1
        if len(row) != width:
            raise MapParseError(f"ragged row at line {lineno}")
        bad = set(row) - MAP_CHARS
        if bad:
            raise MapParseError(f"unknown character {sorted(bad)[0]!r} at line {lineno}")

    height = len(rows)
    occ = np.zeros((height, width), dtype=bool)
    start = goal = None
    for k, row in enumerate(rows):
        iy = height - 1 - k
        for ix, ch in enumerate(row):
            if ch == "#":
                occ[iy, ix] = True
            elif ch == "S":
                start = (ix, iy)
            elif ch == "G":
                goal = (ix, iy)
    return OccupancyGrid(occ, cell_size, origin, start, goal, name)


def read_map(path: str | Path) -> OccupancyGrid:
    path = Path(path)
    return load_map(path.read_text(encoding="utf-8"), name=path.stem)


def dump_map(grid: OccupancyGrid) -> str:
    out = [f"cell_size {grid.cell_size:g}"]
    if grid.origin != (0.0, 0.0):
        out.append(f"origin {grid.origin[0]:g} {grid.origin[1]:g}")
    for iy in range(grid.height_cells - 1, -1, -1):
        row = []
        for ix in range(grid.width_cells):
            if grid.occupancy[iy, ix]:
                row.append("#")
            elif (ix, iy) == grid.start_hint:
                row.append("S")
            elif (ix, iy) == grid.goal_hint:
                row.append("G")
            else:
                row.append(".")
        out.append("".join(row))
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class RobotGeometry:
    """Robot footprint as a union of discs given in the body frame."""

    spheres: tuple[tuple[float, float, float], ...] = field(
        default=((-0.2, 0.0, 0.2), (0.2, 0.0, 0.2))
    )

    def __post_init__(self):
        spheres = tuple((float(ox), float(oy), float(r)) for ox, oy, r in self.spheres)
        if not spheres:
            raise ValueError("robot geometry needs at least one sphere")
        if any(not r > 0 for _, _, r in spheres):
            raise ValueError("sphere radii must be positive")
        object.__setattr__(self, "spheres", spheres)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([(ox, oy) for ox, oy, _ in self.spheres], dtype=np.float64)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array([r for _, _, r in self.spheres], dtype=np.float64)

    @property
    def max_radius(self) -> float:
        return max(r for _, _, r in self.spheres)

    @property
    def bounding_radius(self) -> float:
        return max(math.hypot(ox, oy) + r for ox, oy, r in self.spheres)

    def inflated(self, margin: float) -> "RobotGeometry":
        return RobotGeometry(tuple((ox, oy, r + margin) for ox, oy, r in self.spheres))


def sphere_centers(geom: RobotGeometry, poses: np.ndarray) -> np.ndarray:
    """World-frame sphere centers, shape (n_poses, n_spheres, 2)."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    off = geom.offsets
    cx = poses[:, 0:1] + c * off[:, 0] - s * off[:, 1]
    cy = poses[:, 1:2] + s * off[:, 0] + c * off[:, 1]
    return np.stack([cx, cy], axis=-1)


def discs_free(grid: OccupancyGrid, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Per-disc freedom test; ``centers`` is (..., 2), ``radii`` broadcasts against it.

    A disc is blocked when it leaves the map or when the closest point of any
    occupied cell's square lies within its radius.
    """
    centers = np.asarray(centers, dtype=float)
    r = np.broadcast_to(np.asarray(radii, dtype=float), centers.shape[:-1])
    cx = centers[..., 0]
    cy = centers[..., 1]
    x_min, y_min, x_max, y_max = grid.bounds
    inside = (cx - r >= x_min) & (cx + r <= x_max) & (cy - r >= y_min) & (cy + r <= y_max)
    free = inside.copy()

    cs = grid.cell_size
    reach = int(math.ceil(float(r.max(initial=0.0)) / cs)) if r.size else 0
    gx = (cx - grid.origin[0]) / cs
    gy = (cy - grid.origin[1]) / cs
    # clip keeps index math valid for discs already rejected as out of bounds
    bx = np.clip(np.floor(gx), -1, grid.width_cells).astype(np.int64)
    by = np.clip(np.floor(gy), -1, grid.height_cells).astype(np.int64)
    occ = grid.occupancy
    if reach + 1 > _PAD:
        padded = np.pad(occ, reach + 1, constant_values=True)
        pad = reach + 1
    else:
        padded = grid._padded
        pad = _PAD
    r2 = r * r
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            ix = bx + dx
            iy = by + dy
            hit = padded[iy + pad, ix + pad]
            if not hit.any():
                continue
            # closest point of the cell square to the disc center
            lo_x = grid.origin[0] + ix * cs
            lo_y = grid.origin[1] + iy * cs
            qx = np.minimum(np.maximum(cx, lo_x), lo_x + cs)
            qy = np.minimum(np.maximum(cy, lo_y), lo_y + cs)
            d2 = (qx - cx) ** 2 + (qy - cy) ** 2
            free &= ~(hit & (d2 <= r2))
    return free


@njit(cache=True)
def _pose_blocked(px, py, psi, offsets, radii, padded, pad, ox, oy, cs, x_max, y_max):
    c = math.cos(psi)
    sn = math.sin(psi)
    for k in range(radii.shape[0]):
        cx = px + c * offsets[k, 0] - sn * offsets[k, 1]
        cy = py + sn * offsets[k, 0] + c * offsets[k, 1]
        r = radii[k]
        if cx - r < ox or cx + r > x_max or cy - r < oy or cy + r > y_max:
            return True
        ix0 = math.floor((cx - r - ox) / cs)
        ix1 = math.floor((cx + r - ox) / cs)
        iy0 = math.floor((cy - r - oy) / cs)
        iy1 = math.floor((cy + r - oy) / cs)
        r2 = r * r
        for iy in range(iy0, iy1 + 1):
            for ix in range(ix0, ix1 + 1):
                if padded[iy + pad, ix + pad]:
                    lo_x = ox + ix * cs
                    lo_y = oy + iy * cs
                    qx = min(max(cx, lo_x), lo_x + cs)
                    qy = min(max(cy, lo_y), lo_y + cs)
                    if (qx - cx) ** 2 + (qy - cy) ** 2 <= r2:
                        return True
    return False


@njit(cache=True)
def _poses_free(poses, offsets, radii, padded, pad, ox, oy, cs, x_max, y_max):
    out = np.empty(poses.shape[0], dtype=np.bool_)
    for i in range(poses.shape[0]):
        out[i] = not _pose_blocked(poses[i, 0], poses[i, 1], poses[i, 2], offsets, radii,
                                   padded, pad, ox, oy, cs, x_max, y_max)
    return out


@njit(cache=True)
def _first_blocked(poses, offsets, radii, padded, pad, ox, oy, cs, x_max, y_max):
    for i in range(poses.shape[0]):
        if _pose_blocked(poses[i, 0], poses[i, 1], poses[i, 2], offsets, radii,
                         padded, pad, ox, oy, cs, x_max, y_max):
            return i
    return -1


def _kernel_args(grid: OccupancyGrid, geom: RobotGeometry):
    x0, y0, x1, y1 = grid.bounds
    padded, pad = grid._padded, _PAD
    if geom.max_radius > grid.cell_size * (_PAD - 1):
        pad = int(math.ceil(geom.max_radius / grid.cell_size)) + 1
        padded = np.pad(grid.occupancy, pad, constant_values=True)
    return geom.offsets, geom.radii, padded, pad, x0, y0, grid.cell_size, x1, y1


def states_free(grid: OccupancyGrid, geom: RobotGeometry, poses) -> np.ndarray:
    """Vector of per-pose freedom flags for an (n, >=3) array of poses."""
    poses = np.ascontiguousarray(np.atleast_2d(np.asarray(poses, dtype=np.float64)))
    return _poses_free(poses, *_kernel_args(grid, geom))


def is_state_free(grid: OccupancyGrid, geom: RobotGeometry, pose) -> bool:
    return bool(states_free(grid, geom, np.asarray(pose, dtype=float)[:3])[0])


def first_collision(grid: OccupancyGrid, geom: RobotGeometry, states) -> int:
    """Index of the first blocked pose, or -1 when the whole sequence is free."""
    states = np.ascontiguousarray(np.atleast_2d(np.asarray(states, dtype=np.float64)))
    if states.shape[0] == 0:
        raise ValueError("edge must contain at least one state")
    return int(_first_blocked(states, *_kernel_args(grid, geom)))


def is_edge_free(grid: OccupancyGrid, geom: RobotGeometry, states) -> bool:
    """True iff every pose of the (integrated) edge is collision-free."""
    return first_collision(grid, geom, states) < 0


def inflate(grid: OccupancyGrid, radius: float) -> OccupancyGrid:
    """Grid whose free cells are those whose center has ``radius`` clearance."""
    cs = grid.cell_size
    iy, ix = np.mgrid[0 : grid.height_cells, 0 : grid.width_cells]
    centers = np.stack(
        [grid.origin[0] + (ix + 0.5) * cs, grid.origin[1] + (iy + 0.5) * cs], axis=-1
    )
    blocked = ~discs_free(grid, centers, radius) | grid.occupancy
    return OccupancyGrid(blocked, cs, grid.origin, grid.start_hint, grid.goal_hint, grid.name)


@dataclass(frozen=True)
class LocalPatch:
    values: np.ndarray
    extent: float
    frame: Pose

    @property
    def size(self) -> int:
        return self.values.shape[0]


_offset_cache: dict[tuple[int, float], np.ndarray] = {}


def _patch_offsets(size: int, extent: float) -> np.ndarray:
    key = (size, extent)
    off = _offset_cache.get(key)
    if off is None:
        step = extent / size
        k = (np.arange(size) - (size - 1) / 2) * step
        ly, lx = np.meshgrid(k, k, indexing="ij")
        off = np.ascontiguousarray(np.stack([lx.ravel(), ly.ravel()]))
        _offset_cache[key] = off
    return off


def extract_local_patch(grid: OccupancyGrid, pose, size: int = 15, extent: float = 6.0) -> LocalPatch:
    """Occupancy sampled around ``pose`` in its own frame.

    ``values[r, c]`` is the obstacle flag at local point
    ``((c - h) * s, (r - h) * s)`` with ``h = (size-1)/2`` and ``s = extent/size``;
    columns run along the heading, rows to the left of it.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError("patch size must be an odd positive integer")
    if not extent > 0:
        raise ValueError("patch extent must be positive")
    x, y, psi = float(pose[0]), float(pose[1]), float(pose[2])
    return LocalPatch(_patch_values(grid, x, y, psi, size, extent), extent, (x, y, psi))


@njit(cache=True)
def _patch_kernel(occ, ox, oy, cs, x, y, psi, off):
    c = math.cos(psi)
    sn = math.sin(psi)
    h, w = occ.shape
    n = off.shape[1]
    out = np.empty(n)
    for k in range(n):
        wx = x + c * off[0, k] - sn * off[1, k]
        wy = y + sn * off[0, k] + c * off[1, k]
        ix = math.floor((wx - ox) / cs)
        iy = math.floor((wy - oy) / cs)
        if 0 <= ix < w and 0 <= iy < h:
            out[k] = 1.0 if occ[iy, ix] else 0.0
        else:
            out[k] = 1.0
    return out


def _patch_values(grid: OccupancyGrid, x: float, y: float, psi: float, size: int, extent: float) -> np.ndarray:
    off = _patch_offsets(size, extent)
    vals = _patch_kernel(grid.occupancy, grid.origin[0], grid.origin[1], grid.cell_size, x, y, psi, off)
    return vals.reshape(size, size)
