"""Policy conditioning expressed in the frame of the expanding tree node."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import CarParams
from ..workspace import LocalPatch, OccupancyGrid, _patch_values

N_FEATURES = 7  # rel_x, rel_y, sin(bearing), cos(bearing), v, D, delta
TARGET_CLIP = 2.0


@dataclass(frozen=True)
class ObservationSpec:
    patch_size: int = 15
    extent: float = 6.0

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd")
        if not self.extent > 0:
            raise ValueError("extent must be positive")

    @property
    def cond_dim(self) -> int:
        return self.patch_size ** 2 + N_FEATURES


def _features(x_near, target_xy, extent: float, params: CarParams) -> np.ndarray:
    x, y, psi, v, d, delta = (float(c) for c in x_near[:6])
    dx = float(target_xy[0]) - x
    dy = float(target_xy[1]) - y
    c, s = math.cos(psi), math.sin(psi)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    bearing = math.atan2(ly, lx)
    return np.array([
        min(max(lx / extent, -TARGET_CLIP), TARGET_CLIP),
        min(max(ly / extent, -TARGET_CLIP), TARGET_CLIP),
        math.sin(bearing),
        math.cos(bearing),
        (2.0 * v - (params.v_max + params.v_min)) / (params.v_max - params.v_min),
        (2.0 * d - (params.D_max + params.D_min)) / (params.D_max - params.D_min),
        (2.0 * delta - (params.delta_max + params.delta_min)) / (params.delta_max - params.delta_min),
    ])


def build_condition(x_near, x_target, patch: LocalPatch, params: CarParams | None = None) -> np.ndarray:
    """Flattened patch, target relative to ``x_near`` and normalized ego features.

    ``x_target`` may be a full state or just an (x, y) goal; only its
    position is used, so the vector is invariant to rigid motions of the
    whole scene.
    """
    params = params or CarParams()
    feats = _features(x_near, x_target, patch.extent, params)
    return np.concatenate([patch.values.ravel(), feats])


def condition_for(grid: OccupancyGrid, x_near, target_xy, spec: ObservationSpec, params: CarParams) -> np.ndarray:
    vals = _patch_values(grid, float(x_near[0]), float(x_near[1]), float(x_near[2]), spec.patch_size, spec.extent)
    return np.concatenate([vals.ravel(), _features(x_near, target_xy, spec.extent, params)])


def mirror_conditions(cond: np.ndarray, spec: ObservationSpec) -> np.ndarray:
    """Reflect conditions across the heading axis (left/right swap).

    Assumes steering bounds symmetric about zero.
    """
    p = spec.patch_size
    out = cond.copy()
    patches = out[:, : p * p].reshape(-1, p, p)
    out[:, : p * p] = patches[:, ::-1, :].reshape(-1, p * p)
    f = p * p
    out[:, f + 1] *= -1.0  # rel_y
    out[:, f + 2] *= -1.0  # sin(bearing)
    out[:, f + 6] *= -1.0  # delta
    return out


def mirror_chunks(chunks: np.ndarray) -> np.ndarray:
    out = chunks.copy()
    out[:, 1::2] *= -1.0  # steering rate
    return out
