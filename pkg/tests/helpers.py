"""Small map builders shared by the tests."""
import numpy as np

from ditree.workspace import OccupancyGrid, load_map


def grid_from_rows(rows, cell_size=1.0, origin=None):
    text = f"cell_size {cell_size}\n"
    if origin is not None:
        text += f"origin {origin[0]} {origin[1]}\n"
    return load_map(text + "\n".join(rows) + "\n")


def open_grid(w, h, cell_size=1.0):
    return OccupancyGrid(np.zeros((h, w), dtype=bool), cell_size)


def walled_grid(w, h, cell_size=1.0):
    occ = np.zeros((h, w), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    return OccupancyGrid(occ, cell_size)


def box_distance(grid, x, y):
    """Distance from (x, y) to the nearest occupied cell square, by brute force."""
    iy, ix = np.nonzero(grid.occupancy)
    if ix.size == 0:
        return np.inf
    lo_x = grid.origin[0] + ix * grid.cell_size
    lo_y = grid.origin[1] + iy * grid.cell_size
    dx = np.maximum(np.maximum(lo_x - x, 0.0), x - (lo_x + grid.cell_size))
    dy = np.maximum(np.maximum(lo_y - y, 0.0), y - (lo_y + grid.cell_size))
    return float(np.sqrt(dx * dx + dy * dy).min())


def boundary_distance(grid, x, y):
    """Distance from (x, y) to the outside of the map (negative when outside)."""
    x0, y0, x1, y1 = grid.bounds
    return min(x - x0, x1 - x, y - y0, y1 - y)


def mc_disc_blocked(grid, x, y, r, rng, n=100_000):
    """Monte-Carlo oracle: does any of ``n`` uniform points in the disc land in an occupied or outside cell?"""
    rad = r * np.sqrt(rng.random(n))
    ang = rng.random(n) * 2 * np.pi
    px = x + rad * np.cos(ang)
    py = y + rad * np.sin(ang)
    ix = np.floor((px - grid.origin[0]) / grid.cell_size).astype(np.int64)
    iy = np.floor((py - grid.origin[1]) / grid.cell_size).astype(np.int64)
    outside = (ix < 0) | (iy < 0) | (ix >= grid.width_cells) | (iy >= grid.height_cells)
    inside = ~outside
    hit = np.zeros(n, dtype=bool)
    hit[inside] = grid.occupancy[iy[inside], ix[inside]]
    return bool((hit | outside).any())
