"""A trained policy bundle: network weights plus the normalization they were trained with."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import CarParams
from .conditioning import ObservationSpec
from .flow import ActionScaler
from .network import PolicyNet


def sidecar_path(weights_path) -> Path:
    p = Path(weights_path)
    return p.with_name(p.name + ".json")


@dataclass
class Policy:
    net: PolicyNet
    action_offset: np.ndarray
    action_scale: np.ndarray
    spec: ObservationSpec = field(default_factory=ObservationSpec)
    meta: dict = field(default_factory=dict)

    def scaler(self, params: CarParams) -> ActionScaler:
        return ActionScaler(params, self.action_offset, self.action_scale)

    def save(self, path) -> None:
        """Weights go to ``path``; normalization and provenance to ``path + '.json'``."""
        self.net.save(path)
        doc = {
            "action_offset": [float(x) for x in self.action_offset],
            "action_scale": [float(x) for x in self.action_scale],
            "patch_size": self.spec.patch_size,
            "extent": self.spec.extent,
            "meta": self.meta,
        }
        sidecar_path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, params: CarParams | None = None, hidden=None, horizon=None) -> "Policy":
        """Load weights; without a sidecar the control box normalization is assumed."""
        side = sidecar_path(path)
        if side.exists():
            doc = json.loads(side.read_text())
            spec = ObservationSpec(int(doc["patch_size"]), float(doc["extent"]))
            offset = np.array(doc["action_offset"], dtype=float)
            scale = np.array(doc["action_scale"], dtype=float)
            meta = doc.get("meta", {})
        else:
            spec = ObservationSpec()
            base = ActionScaler(params or CarParams())
            offset, scale, meta = base.offset, base.scale, {}
        net = PolicyNet.load(path, hidden=hidden, cond_dim=spec.cond_dim, horizon=horizon)
        return cls(net, offset, scale, spec, meta)
