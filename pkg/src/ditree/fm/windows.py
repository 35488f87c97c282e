"""Turn expert trajectories into (condition, normalized chunk) training pairs."""
from __future__ import annotations

import numpy as np

from ..dynamics import CarParams
from ..workspace import OccupancyGrid
from .conditioning import ObservationSpec, condition_for, mirror_chunks, mirror_conditions
from .flow import ActionScaler, TrainingSet


class MapMismatchError(ValueError):
    pass


def training_set(trajectories, grid: OccupancyGrid, spec: ObservationSpec | None = None,
                 params: CarParams | None = None, horizon: int = 16, stride: int = 4,
                 mirror: bool = True, map_id: str | None = None,
                 scaler: ActionScaler | None = None) -> TrainingSet:
    """Overlapping H-action windows conditioned on the trajectory's goal.

    Normalized chunks are clipped to [-1, 1]. With ``mirror`` the left/right
    reflection of every window is appended.
    ``map_id`` (if given) must match every trajectory's map id. Mirroring
    assumes ``scaler`` is symmetric in the steering-rate component.
    """
    spec = spec or ObservationSpec()
    params = params or CarParams()
    scaler = scaler or ActionScaler(params)
    conds, chunks = [], []
    for tr in trajectories:
        if map_id is not None and tr.map_id != map_id:
            raise MapMismatchError(f"trajectory recorded on {tr.map_id!r}, training map is {map_id!r}")
        for k in range(0, len(tr.actions) - horizon + 1, stride):
            conds.append(condition_for(grid, tr.states[k], tr.goal, spec, params))
            chunks.append(np.clip(scaler.normalize(tr.actions[k : k + horizon]), -1.0, 1.0).ravel())
    if not conds:
        return TrainingSet(np.zeros((0, spec.cond_dim)), np.zeros((0, 2 * horizon)))
    cond = np.array(conds)
    chunk = np.array(chunks)
    if mirror:
        cond = np.concatenate([cond, mirror_conditions(cond, spec)])
        chunk = np.concatenate([chunk, mirror_chunks(chunk)])
    return TrainingSet(cond, chunk, {"windows": len(conds), "mirrored": bool(mirror)})
