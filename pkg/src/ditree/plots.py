"""SVG figures: map with tree and solution overlays, benchmark bars and ablation curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import numpy as np
from matplotlib.collections import LineCollection, PolyCollection
from matplotlib.figure import Figure
from matplotlib.patches import Circle

from .workspace import OccupancyGrid

# fixed ids and no timestamp make the SVG bytes a pure function of the input
_SVG_RC = {"svg.hashsalt": "ditree", "svg.fonttype": "none", "path.simplify": False}
_SVG_META = {"Date": None, "Creator": None}


def _save(fig: Figure, path) -> None:
    path = Path(path)
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata=_SVG_META)


def _obstacle_polys(grid: OccupancyGrid) -> list:
    """One rectangle per horizontal run of occupied cells."""
    cs = grid.cell_size
    ox, oy = grid.origin
    polys = []
    for iy in range(grid.height_cells):
        row = grid.occupancy[iy]
        ix = 0
        w = len(row)
        while ix < w:
            if row[ix]:
                j = ix
                while j < w and row[j]:
                    j += 1
                x0, x1 = ox + ix * cs, ox + j * cs
                y0, y1 = oy + iy * cs, oy + (iy + 1) * cs
                polys.append([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
                ix = j
            else:
                ix += 1
    return polys


def _edges(tree) -> list:
    if tree is None:
        return []
    return [np.asarray(e)[:, :2] for e in tree.edge_states if e is not None]


def emit_plot(grid: OccupancyGrid, result, path, start=None, goal=None, goal_radius: float = 1.0,
              title: str | None = None) -> Path:
    """Map, tree edges (one polyline each), solution and start/goal markers as SVG.

    ``result`` is a :class:`PlanResult` (its tree may be ``None``), or
    ``None`` for the bare map. States outside the map are clipped by the axes.
    """
    x0, y0, x1, y1 = grid.bounds
    width = 8.0
    height = max(2.0, width * (y1 - y0) / max(x1 - x0, 1e-9))
    fig = Figure(figsize=(width, height))
    ax = fig.add_subplot(1, 1, 1)
    ax.add_collection(PolyCollection(_obstacle_polys(grid), facecolors="0.2", edgecolors="none", gid="obstacles"))
    edges = _edges(getattr(result, "tree", None))
    if edges:
        ax.add_collection(LineCollection(edges, colors="tab:blue", linewidths=0.4, alpha=0.6, gid="tree-edges"))
    states = getattr(result, "states", None)
    if states is not None and len(states) > 1:
        ax.plot(states[:, 0], states[:, 1], color="tab:red", lw=1.6, gid="solution")
    if start is None and states is not None and len(states):
        start = states[0]
    if start is not None:
        ax.plot([start[0]], [start[1]], "o", color="tab:green", ms=7, gid="start")
    if goal is not None:
        ax.add_patch(Circle((goal[0], goal[1]), goal_radius, fc="none", ec="tab:red", lw=1.0, gid="goal-region"))
        ax.plot([goal[0]], [goal[1]], "*", color="tab:red", ms=10, gid="goal")
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    return Path(path)


def plot_rates(reports, path, title: str = "success rate") -> Path:
    """Grouped bars of success rate per scenario and method."""
    scenarios = list(dict.fromkeys(r.scenario for r in reports))
    methods = list(dict.fromkeys(r.method for r in reports))
    rate = {(r.scenario, r.method): r.rate_pct for r in reports}
    fig = Figure(figsize=(max(5.0, 1.4 * len(scenarios) + 2), 4.0))
    ax = fig.add_subplot(1, 1, 1)
    w = 0.8 / max(1, len(methods))
    x = np.arange(len(scenarios))
    for k, m in enumerate(methods):
        ax.bar(x + (k - (len(methods) - 1) / 2) * w, [rate.get((s, m), 0.0) for s in scenarios], w, label=m,
               gid=f"bars-{m}")
    ax.set_xticks(x)
    ax.set_xticklabels(scenarios, rotation=20)
    ax.set_ylim(0, 105)
    ax.set_ylabel("success rate [%]")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    return Path(path)


def plot_sweep(sweep, path, budget: float, use_iterations: bool = False) -> Path:
    """Success rate against the budget spent, one curve per swept value."""
    grid_points = np.linspace(0.0, budget, 101)
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot(1, 1, 1)
    for v in sweep.values:
        ax.plot(grid_points, 100.0 * sweep.curve(v, grid_points, use_iterations), label=f"{sweep.kind}={v}",
                gid=f"curve-{v}")
    ax.set_xlabel("iterations" if use_iterations else "runtime [s]")
    ax.set_ylabel("success rate [%]")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title(f"ablation: {sweep.kind}")
    fig.tight_layout()
    _save(fig, path)
    return Path(path)
