"""Benchmark harness: scenario suites, the three planning methods, trial statistics and ablations."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import Config, ConfigError
from .fm import DiffusionEdgeSampler, Policy
from .planner import PlanResult, PlanStats, Query, Status, UniformSampler, plan
from .validate import ObstacleOracle, validate_solution
from .workspace import OccupancyGrid, RobotGeometry, first_collision, is_state_free, read_map

log = logging.getLogger(__name__)

METHODS = ("rrt", "ditree", "dp")
LEARNED = ("ditree", "dp")
SPLITS = ("train", "validation", "test")
CSV_COLUMNS = ("scenario", "method", "trials", "successes", "rate_pct", "rt_mean_s", "rt_std_s",
               "len_mean_m", "len_rel_rrt")
TIME_COLUMNS = ("rt_mean_s", "rt_std_s")
ABLATIONS = ("denoise_K", "prop_N", "dgb")
MISSING = "--"


class SuiteError(ValueError):
    pass


@dataclass
class Scenario:
    label: str
    grid: OccupancyGrid
    start: tuple
    goal: tuple
    goal_radius: float = 1.0
    split: str = "test"
    map_path: str = ""

    @property
    def query(self) -> Query:
        return Query(self.start, self.goal, self.goal_radius)


def scenario_from_map(grid: OccupancyGrid, label: str | None = None, heading: float = 0.0,
                      goal_radius: float = 1.0, split: str = "test", map_path: str = "") -> Scenario:
    """Scenario from the map's S/G markers, starting at rest with the given heading."""
    if grid.start_hint is None or grid.goal_hint is None:
        raise SuiteError(f"map {grid.name or map_path!r} has no S/G markers and no explicit query")
    sx, sy = grid.cell_center(*grid.start_hint)
    gx, gy = grid.cell_center(*grid.goal_hint)
    return Scenario(label or grid.name, grid, (sx, sy, heading, 0.0, 0.0, 0.0), (gx, gy), goal_radius, split, map_path)


def _floats(raw: str, n: int, where: str) -> tuple:
    try:
        vals = tuple(float(s) for s in raw.replace(",", " ").split())
    except ValueError:
        vals = ()
    if len(vals) != n:
        raise SuiteError(f"{where}: expected {n} numbers, got {raw!r}")
    return vals


def load_suite(path, training_grid: OccupancyGrid | None = None, geom: RobotGeometry | None = None) -> list[Scenario]:
    """Scenarios from a suite directory.

    With a ``suite.ini`` each section names a scenario (``map``, optional
    ``split``, ``start = x y psi``, ``goal = x y``, ``heading``,
    ``goal_radius``); without one, every ``*.map`` with S/G markers becomes a
    test scenario. Test scenarios on the training map are rejected.
    """
    root = Path(path)
    if root.is_file():
        root, ini = root.parent, root
    else:
        ini = root / "suite.ini"
    geom = geom or RobotGeometry()
    scenarios = []
    train_digest = training_grid.digest if training_grid is not None else None
    if ini.exists():
        cp = configparser.ConfigParser(interpolation=None)
        cp.read(ini, encoding="utf-8")
        if cp.has_section("suite") and cp["suite"].get("training_map") and train_digest is None:
            train_digest = read_map(root / cp["suite"]["training_map"]).digest
        for name in cp.sections():
            if name == "suite":
                continue
            sec = cp[name]
            if "map" not in sec:
                raise SuiteError(f"[{name}] needs a map entry")
            map_path = root / sec["map"]
            grid = read_map(map_path)
            split = sec.get("split", "test")
            if split not in SPLITS:
                raise SuiteError(f"[{name}] unknown split {split!r}")
            radius = float(sec.get("goal_radius", "1.0"))
            sc = scenario_from_map(grid, name, float(sec.get("heading", "0.0")), radius, split, str(map_path)) \
                if not ("start" in sec and "goal" in sec) else None
            if "start" in sec:
                x, y, psi = _floats(sec["start"], 3, f"[{name}] start")
                start = (x, y, psi, 0.0, 0.0, 0.0)
                goal = _floats(sec["goal"], 2, f"[{name}] goal") if "goal" in sec else sc.goal
                sc = Scenario(name, grid, start, goal, radius, split, str(map_path))
            elif "goal" in sec:
                sc = replace(sc, goal=_floats(sec["goal"], 2, f"[{name}] goal"))
            scenarios.append(sc)
    else:
        for map_path in sorted(root.glob("*.map")):
            scenarios.append(scenario_from_map(read_map(map_path), map_path.stem, map_path=str(map_path)))
    if not scenarios:
        raise SuiteError(f"no scenarios found in {root}")
    for sc in scenarios:
        if not is_state_free(sc.grid, geom, np.asarray(sc.start, dtype=float)):
            raise SuiteError(f"scenario {sc.label}: start state is in collision")
        if train_digest is not None and sc.split == "test" and sc.grid.digest == train_digest:
            raise SuiteError(f"scenario {sc.label}: test map is identical to the training map")
    return scenarios


# ---------------------------------------------------------------- methods


def dp_baseline(policy: Policy, scenario: Scenario, cfg: Config, rng_seed: int,
                clock: Callable[[], float] = time.perf_counter) -> PlanResult:
    """Repeated goal-conditioned policy rollouts from the start, no tree.

    A rollout is extended one N-action segment per iteration and abandoned on
    collision or after ``bench.dp_max_actions`` actions; the first rollout
    that enters the goal disc with every substate free is returned.
    """
    t0 = clock()
    pcfg = cfg.planner
    params = cfg.car
    q = scenario.query
    start = np.asarray(q.start, dtype=float)
    gx, gy = q.goal
    r2 = q.goal_radius ** 2
    stats = PlanStats()

    def done(status, states=None, actions=None):
        stats.wall_time = clock() - t0
        return PlanResult(status, states, actions, stats)

    if (start[0] - gx) ** 2 + (start[1] - gy) ** 2 <= r2:
        return done(Status.SOLVED, start[None, :], np.zeros((0, 2)))
    sampler = DiffusionEdgeSampler(policy.net, scenario.grid, q.goal, params, replace(cfg.sample, dgb=0.0),
                                   policy.spec, pcfg.dt, cfg.geometry, q.goal_radius, policy.scaler(params))
    h = sampler.horizon
    seg_chunks = max(1, pcfg.n_actions // h)
    rng = np.random.default_rng(rng_seed)
    budget_iters = pcfg.max_iterations
    it = 0

    while True:
        states = [start[None, :]]
        actions = []
        n = 0
        state = start
        while n < cfg.bench.dp_max_actions:
            if not pcfg.deterministic and clock() - t0 > pcfg.time_budget:
                return done(Status.TIMEOUT)
            if it >= budget_iters:
                return done(Status.ITERATION_LIMIT)
            it += 1
            stats.iterations = it
            chunks = min(seg_chunks, math.ceil((cfg.bench.dp_max_actions - n) / h))
            a, s = sampler.rollout(state, q.goal, chunks, rng)
            stats.sampler_calls += 1
            d2 = (s[:, 0] - gx) ** 2 + (s[:, 1] - gy) ** 2
            hits = np.flatnonzero(d2 <= r2)
            if hits.size:
                k = int(hits[0])
                s, a = s[: k + 1], a[:k]
            blocked = first_collision(scenario.grid, cfg.geometry, s[1:])
            stats.collision_checks += len(s) - 1 if blocked < 0 else blocked + 1
            if blocked >= 0:
                break
            states.append(s[1:])
            actions.append(a)
            n += len(a)
            state = s[-1]
            if hits.size:
                return done(Status.SOLVED, np.concatenate(states), np.concatenate(actions))


def plan_with(method: str, scenario: Scenario, cfg: Config, seed: int, policy: Policy | None = None,
              clock: Callable[[], float] = time.perf_counter) -> PlanResult:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if method in LEARNED and policy is None:
        raise ConfigError(f"method {method} needs policy weights")
    pcfg = replace(cfg.planner, rng_seed=seed, goal_radius=scenario.goal_radius)
    run_cfg = replace(cfg, planner=pcfg)
    if method == "dp":
        return dp_baseline(policy, scenario, run_cfg, seed, clock)
    params = cfg.car
    if method == "rrt":
        sampler = UniformSampler(scenario.grid, params)
    else:
        sampler = DiffusionEdgeSampler(policy.net, scenario.grid, scenario.goal, params, cfg.sample, policy.spec,
                                       pcfg.dt, cfg.geometry, scenario.goal_radius, policy.scaler(params))
    return plan(scenario.query, scenario.grid, cfg.geometry, sampler, pcfg, params, clock)


# ---------------------------------------------------------------- trials


@dataclass
class TrialRecord:
    scenario: str
    method: str
    seed: int
    status: str
    success: bool
    runtime: float
    length: float | None
    iterations: int
    vertices: int
    check: str = ""

    @property
    def claimed(self) -> bool:
        return self.status == Status.SOLVED.value


def run_trial(scenario: Scenario, method: str, seed: int, cfg: Config, policy: Policy | None = None,
              oracle: ObstacleOracle | None = None) -> TrialRecord:
    res = plan_with(method, scenario, cfg, seed, policy)
    success = False
    check = ""
    length = None
    if res.solved:
        verdict = validate_solution(res.states, res.actions, scenario.start, scenario.goal, scenario.goal_radius,
                                    scenario.grid, cfg.geometry, cfg.car, cfg.planner.dt, oracle=oracle)
        success = verdict.ok
        check = "ok" if verdict.ok else verdict.reason
        if success:
            length = res.path_length()
        else:
            log.error("safety re-check failed: %s/%s seed %d: %s", scenario.label, method, seed, verdict.reason)
    return TrialRecord(scenario.label, method, seed, res.status.value, success, res.stats.wall_time, length,
                       res.stats.iterations, res.stats.vertices, check)


_WORKER: dict = {}


def _init_worker(scenarios, cfg, policy):
    _WORKER.update(scenarios=scenarios, cfg=cfg, policy=policy,
                   oracles=[ObstacleOracle(s.grid) for s in scenarios])


def _worker_trial(task):
    i, method, seed = task
    w = _WORKER
    return task, run_trial(w["scenarios"][i], method, seed, w["cfg"], w["policy"], w["oracles"][i])


def run_benchmark(scenarios: Sequence[Scenario], methods: Sequence[str], cfg: Config, seeds: Sequence[int],
                  policy: Policy | None = None, workers: int = 1,
                  progress: Callable[[TrialRecord], None] | None = None) -> list[TrialRecord]:
    """Every (scenario, method, seed) trial, returned in that order.

    Solved results count as successes only after the independent re-check.
    """
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}")
    if policy is None and any(m in LEARNED for m in methods):
        raise ConfigError("learned methods requested but no policy weights were given")
    if not seeds:
        raise ConfigError("need at least one trial seed")
    tasks = [(i, m, int(s)) for i in range(len(scenarios)) for m in methods for s in seeds]
    results = {}
    if workers <= 1:
        _init_worker(list(scenarios), cfg, policy)
        for t in tasks:
            key, rec = _worker_trial(t)
            results[key] = rec
            if progress:
                progress(rec)
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(list(scenarios), cfg, policy)) as ex:
            for key, rec in ex.map(_worker_trial, tasks):
                results[key] = rec
                if progress:
                    progress(rec)
    return [results[t] for t in tasks]


# ---------------------------------------------------------------- statistics


@dataclass
class ScenarioReport:
    scenario: str
    method: str
    trials: int
    successes: int
    rt_mean: float | None = None
    rt_std: float | None = None
    len_mean: float | None = None
    len_rel_rrt: float | None = None

    @property
    def rate_pct(self) -> float:
        return 100.0 * self.successes / self.trials if self.trials else 0.0


def report_stats(records: Sequence[TrialRecord]) -> ScenarioReport:
    """Success rate plus runtime and length statistics over the successful trials."""
    if not records:
        raise ValueError("report_stats needs at least one trial record")
    ok = [r for r in records if r.success]
    rep = ScenarioReport(records[0].scenario, records[0].method, len(records), len(ok))
    if ok:
        rt = np.array([r.runtime for r in ok])
        rep.rt_mean = float(rt.mean())
        rep.rt_std = float(rt.std())
        rep.len_mean = float(np.mean([r.length for r in ok]))
    return rep


def build_reports(records: Sequence[TrialRecord]) -> list[ScenarioReport]:
    """One report per (scenario, method) in first-seen order, with RRT-relative lengths."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.scenario, r.method), []).append(r)
    reports = [report_stats(g) for g in groups.values()]
    rrt = {rep.scenario: rep.len_mean for rep in reports if rep.method == "rrt"}
    for rep in reports:
        base = rrt.get(rep.scenario)
        if rep.len_mean is not None and base:
            rep.len_rel_rrt = rep.len_mean / base
    return reports


def _fmt(x, spec: str) -> str:
    return MISSING if x is None else format(x, spec)


def reports_csv(reports: Iterable[ScenarioReport], with_times: bool = True) -> str:
    cols = [c for c in CSV_COLUMNS if with_times or c not in TIME_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rep in reports:
        row = {
            "scenario": rep.scenario, "method": rep.method, "trials": rep.trials, "successes": rep.successes,
            "rate_pct": f"{rep.rate_pct:.1f}", "rt_mean_s": _fmt(rep.rt_mean, ".3f"),
            "rt_std_s": _fmt(rep.rt_std, ".3f"), "len_mean_m": _fmt(rep.len_mean, ".2f"),
            "len_rel_rrt": _fmt(rep.len_rel_rrt, ".3f"),
        }
        w.writerow([row[c] for c in cols])
    return buf.getvalue()


def trials_csv(records: Iterable[TrialRecord], with_times: bool = True) -> str:
    cols = ["scenario", "method", "seed", "status", "success", "check", "iterations", "vertices", "length_m"]
    if with_times:
        cols.append("runtime_s")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        row = [r.scenario, r.method, r.seed, r.status, int(r.success), r.check, r.iterations, r.vertices,
               _fmt(r.length, ".4f")]
        if with_times:
            row.append(f"{r.runtime:.4f}")
        w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------- ablations


def ablation_config(cfg: Config, kind: str, value) -> Config:
    """Copy of ``cfg`` with only the swept parameter changed."""
    try:
        if kind == "denoise_K":
            out = cfg.replace("sample", steps=int(value))
        elif kind == "prop_N":
            n = int(value)
            if n % cfg.train.horizon:
                raise ConfigError(f"prop_N={n} is not a multiple of the policy horizon {cfg.train.horizon}")
            out = cfg.replace("planner", n_actions=n, prop_mode="fixed")
        elif kind == "dgb":
            out = cfg.replace("sample", dgb=float(value))
        else:
            raise ConfigError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{kind}={value}: {exc}") from None
    return out


@dataclass
class SweepReport:
    kind: str
    values: list
    records: dict = field(default_factory=dict)  # value -> list[TrialRecord]

    def rows(self) -> list[ScenarioReport]:
        out = []
        for v in self.values:
            rep = report_stats(self.records[v]) if self.records[v] else None
            if rep is not None:
                rep.scenario, rep.method = "all", f"{self.kind}={v}"
                out.append(rep)
        return out

    def csv(self, with_times: bool = True) -> str:
        cols = ["kind", "value", "trials", "successes", "rate_pct", "rt_mean_s", "rt_std_s", "len_mean_m"]
        if not with_times:
            cols = [c for c in cols if c not in TIME_COLUMNS]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for v in self.values:
            rep = report_stats(self.records[v])
            row = {"kind": self.kind, "value": v, "trials": rep.trials, "successes": rep.successes,
                   "rate_pct": f"{rep.rate_pct:.1f}", "rt_mean_s": _fmt(rep.rt_mean, ".3f"),
                   "rt_std_s": _fmt(rep.rt_std, ".3f"), "len_mean_m": _fmt(rep.len_mean, ".2f")}
            w.writerow([row[c] for c in cols])
        return buf.getvalue()

    def curve(self, value, grid_points: np.ndarray, use_iterations: bool = False) -> np.ndarray:
        """Fraction of trials solved within each budget level (success-vs-runtime curve)."""
        recs = self.records[value]
        done = np.array([(r.iterations if use_iterations else r.runtime) for r in recs if r.success])
        return np.array([(done <= g).sum() / len(recs) for g in grid_points])


def ablate(kind: str, values: Sequence, scenarios: Sequence[Scenario], cfg: Config, seeds: Sequence[int],
           policy: Policy, workers: int = 1) -> SweepReport:
    if not values:
        raise ConfigError("ablation needs at least one value")
    if policy is None:
        raise ConfigError("ablations run the learned planner and need policy weights")
    configs = [(v, ablation_config(cfg, kind, v)) for v in values]
    rep = SweepReport(kind, list(values))
    for v, c in configs:
        rep.records[v] = run_benchmark(scenarios, ["ditree"], c, seeds, policy, workers)
    return rep


def read_seeds(path) -> list[int]:
    seeds = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            seeds.extend(int(tok) for tok in line.replace(",", " ").split())
    if not seeds:
        raise ConfigError(f"seed file {path} lists no seeds")
    return seeds


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
