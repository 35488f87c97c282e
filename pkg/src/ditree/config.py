"""INI-style configuration covering every tunable dataclass in the package."""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import CarParams
from .expert import ExpertConfig
from .fm.conditioning import ObservationSpec
from .fm.flow import SampleConfig, TrainConfig
from .planner import PlannerConfig
from .workspace import RobotGeometry


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    trials: int = 10
    budget: float = 30.0
    methods: tuple = ("rrt", "ditree", "dp")
    dp_max_actions: int = 2048
    workers: int = 1
    iterations: int = 2000
    deterministic: bool = False


@dataclass
class Config:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    car: CarParams = field(default_factory=CarParams)
    observation: ObservationSpec = field(default_factory=ObservationSpec)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    geometry: RobotGeometry = field(default_factory=RobotGeometry)

    def replace(self, section: str, **changes) -> "Config":
        """Copy with some fields of one section changed (validation re-runs)."""
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


SECTIONS = ("planner", "sample", "train", "car", "observation", "expert", "bench")


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def _spheres(raw: str) -> tuple:
    out = []
    for part in raw.split(";"):
        if part.strip():
            nums = [float(s) for s in part.split(",")]
            if len(nums) != 3:
                raise ConfigError("geometry.spheres: each sphere needs 'x, y, r'")
            out.append(tuple(nums))
    return tuple(out)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive field names (D_min, dD_max)
    return cp


def from_text(text: str) -> Config:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = Config()
    for name in cp.sections():
        if name == "geometry":
            try:
                cfg = dataclasses.replace(cfg, geometry=RobotGeometry(_spheres(cp[name].get("spheres", ""))))
            except ValueError as exc:
                raise ConfigError(f"geometry: {exc}") from None
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        current = getattr(cfg, name)
        known = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        changes = {}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            changes[key] = _parse(raw, known[key], f"{name}.{key}")
        try:
            cfg = cfg.replace(name, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    h = cfg.train.horizon
    if cfg.planner.prop_mode == "fixed" and cfg.planner.n_actions % h:
        raise ConfigError(f"planner.n_actions={cfg.planner.n_actions} is not a multiple of the horizon {h}")
    if cfg.expert.horizon != h:
        raise ConfigError("expert.horizon must equal train.horizon")
    unknown = set(cfg.bench.methods) - {"rrt", "ditree", "dp"}
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}")


def load(path) -> Config:
    return from_text(Path(path).read_text(encoding="utf-8"))


def to_text(cfg: Config) -> str:
    cp = _parser()
    for name in SECTIONS:
        obj = getattr(cfg, name)
        cp[name] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    cp["geometry"] = {"spheres": "; ".join(", ".join(str(v) for v in s) for s in cfg.geometry.spheres)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
