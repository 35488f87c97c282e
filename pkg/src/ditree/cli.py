"""Command line entry point: data generation, training, planning, benchmarks and plots."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import bench, config
from .config import Config, ConfigError
from .expert import DataGenerationError, DatasetFormatError, generate_dataset, map_id_for, read_dataset, save_dataset
from .fm import Policy, WeightsFormatError, train, training_set
from .fm.flow import ActionScaler, TrainingError
from .planner import InvalidQuery
from .plots import emit_plot, plot_rates, plot_sweep
from .workspace import MapParseError, read_map

log = logging.getLogger("ditree")


def assets_dir() -> Path:
    return Path(str(resources.files("ditree") / "assets"))


def default_weights() -> Path | None:
    p = assets_dir() / "policy.fmw"
    return p if p.exists() else None


def _config(args) -> Config:
    return config.load(args.config) if getattr(args, "config", None) else Config()


def _policy(path, cfg: Config, required: bool) -> Policy | None:
    path = Path(path) if path else default_weights()
    if path is None:
        if required:
            raise ConfigError("no policy weights given (--weights) and none packaged")
        return None
    if not path.exists():
        raise ConfigError(f"weights file {path} does not exist")
    pol = Policy.load(path, cfg.car, hidden=cfg.train.hidden, horizon=cfg.train.horizon)
    if pol.spec != cfg.observation:
        log.info("using observation settings stored with the weights: %s", pol.spec)
    return pol


def _find_training_map(map_id: str) -> Path | None:
    for p in sorted(assets_dir().rglob("*.map")):
        if map_id_for(read_map(p)) == map_id:
            return p
    return None


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    grid = read_map(args.map)
    ds = generate_dataset(grid, args.queries, args.seed, cfg.expert, cfg.geometry, cfg.car, cfg.planner.dt)
    save_dataset(ds, args.out)
    n = sum(len(t.actions) for t in ds.trajectories)
    print(f"wrote {args.out}: {len(ds)} trajectories, {n} actions")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.data)
    if not ds.trajectories:
        raise TrainingError("dataset has no trajectories")
    map_id = ds.trajectories[0].map_id
    map_path = Path(args.map) if args.map else _find_training_map(map_id)
    if map_path is None:
        raise ConfigError(f"cannot find the map {map_id!r} the dataset was recorded on; pass --map")
    grid = read_map(map_path)
    if map_id_for(grid) != map_id:
        raise ConfigError(f"map {map_path} does not match the dataset's map {map_id!r}")
    scaler = ActionScaler(cfg.car, ds.action_offset, ds.action_scale)
    data = training_set(ds.trajectories, grid, cfg.observation, cfg.car, cfg.train.horizon, cfg.train.stride,
                        cfg.train.mirror, map_id, scaler)
    print(f"training on {len(data)} windows")
    net, losses = train(data, cfg.train, cfg.observation.cond_dim, log_every=args.log_every)
    meta = {"map_id": map_id, "dataset_seed": ds.seed, "train_seed": cfg.train.rng_seed,
            "epochs": cfg.train.epochs, "windows": len(data), "final_loss": float(np.mean(losses[-50:]))}
    Policy(net, ds.action_offset, ds.action_scale, cfg.observation, meta).save(args.out)
    print(f"wrote {args.out}: final loss {meta['final_loss']:.4f}")
    return 0


def _scenario_for_plan(args, cfg: Config) -> bench.Scenario:
    grid = read_map(args.map)
    if args.start is not None or args.goal is not None:
        base = bench.scenario_from_map(grid) if grid.start_hint and grid.goal_hint else None
        start = tuple(args.start) + (0.0, 0.0, 0.0) if args.start else base.start
        goal = tuple(args.goal) if args.goal else base.goal
        if start is None or goal is None:
            raise ConfigError("give both --start and --goal for maps without S/G markers")
        return bench.Scenario(grid.name, grid, start, goal, args.goal_radius, "test", args.map)
    return bench.scenario_from_map(grid, goal_radius=args.goal_radius, map_path=args.map)


def _apply_budget(cfg: Config, args) -> Config:
    pc = cfg.planner
    if getattr(args, "budget", None) is not None:
        pc = replace(pc, time_budget=args.budget)
    if getattr(args, "deterministic", False):
        pc = replace(pc, deterministic=True, max_iterations=args.iterations or cfg.bench.iterations)
    elif getattr(args, "iterations", None):
        pc = replace(pc, max_iterations=args.iterations)
    return replace(cfg, planner=pc)


def cmd_plan(args) -> int:
    cfg = _apply_budget(_config(args), args)
    sc = _scenario_for_plan(args, cfg)
    policy = _policy(args.weights, cfg, args.method in bench.LEARNED)
    res = bench.plan_with(args.method, sc, cfg, args.seed, policy)
    res.save(args.out, include_tree=True)
    line = f"{res.status.value}: iterations {res.stats.iterations}, vertices {res.stats.vertices}"
    if res.solved:
        line += f", length {res.path_length():.2f} m, {len(res.actions)} actions"
    if not cfg.planner.deterministic:
        line += f", {res.stats.wall_time:.3f} s"
    print(line)
    if args.plot:
        emit_plot(sc.grid, res, args.plot, sc.start, sc.goal, sc.goal_radius)
    return 0 if res.solved else 2


def _seeds(args, n_default: int) -> list[int]:
    if args.seeds:
        return bench.read_seeds(args.seeds)
    return list(range(args.trials if args.trials is not None else n_default))


def _suite(args, cfg: Config, policy):
    path = Path(args.suite) if args.suite else assets_dir() / "test"
    training = None
    if policy is not None and policy.meta.get("map_id"):
        found = _find_training_map(policy.meta["map_id"])
        training = read_map(found) if found else None
    return bench.load_suite(path, training, cfg.geometry)


def _progress(rec: bench.TrialRecord) -> None:
    log.info("%s %s seed=%d %s%s", rec.scenario, rec.method, rec.seed, rec.status,
             "" if rec.check in ("", "ok") else f" (rejected: {rec.check})")


def cmd_bench(args) -> int:
    cfg = _apply_budget(_config(args), args)
    methods = args.methods or list(cfg.bench.methods)
    policy = _policy(args.weights, cfg, any(m in bench.LEARNED for m in methods))
    scenarios = _suite(args, cfg, policy)
    seeds = _seeds(args, cfg.bench.trials)
    records = bench.run_benchmark(scenarios, methods, cfg, seeds, policy, args.workers or cfg.bench.workers,
                                  _progress)
    reports = bench.build_reports(records)
    with_times = not cfg.planner.deterministic
    out = Path(args.report)
    out.write_text(bench.reports_csv(reports, with_times), encoding="utf-8")
    out.with_name(out.stem + "_trials.csv").write_text(bench.trials_csv(records, with_times), encoding="utf-8")
    plot_rates(reports, out.with_suffix(".svg"))
    sys.stdout.write(bench.reports_csv(reports, with_times))
    rejected = [r for r in records if r.claimed and not r.success]
    if rejected:
        print(f"SAFETY: {len(rejected)} solved results failed the independent re-check", file=sys.stderr)
        return 3
    return 0


def cmd_ablate(args) -> int:
    cfg = _apply_budget(_config(args), args)
    policy = _policy(args.weights, cfg, True)
    scenarios = _suite(args, cfg, policy)
    seeds = _seeds(args, cfg.bench.trials)
    values = [float(v) if args.kind == "dgb" else int(v) for v in args.values]
    sweep = bench.ablate(args.kind, values, scenarios, cfg, seeds, policy, args.workers or cfg.bench.workers)
    with_times = not cfg.planner.deterministic
    out = Path(args.report)
    out.write_text(sweep.csv(with_times), encoding="utf-8")
    budget = cfg.planner.max_iterations if cfg.planner.deterministic else cfg.planner.time_budget
    plot_sweep(sweep, Path(args.plot) if args.plot else out.with_suffix(".svg"), budget, cfg.planner.deterministic)
    sys.stdout.write(sweep.csv(with_times))
    return 0


def cmd_plot(args) -> int:
    from .planner import PlanResult

    grid = read_map(args.map)
    res = PlanResult.load(args.result)
    goal = tuple(args.goal) if args.goal else (grid.cell_center(*grid.goal_hint) if grid.goal_hint else None)
    emit_plot(grid, res, args.out, goal=goal, goal_radius=args.goal_radius)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ditree", description="Kinodynamic tree planning with a flow-matching action sampler")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate an expert dataset on a map")
    g.add_argument("--map", required=True)
    g.add_argument("--queries", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the flow-matching policy")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--map", help="training map (default: looked up among packaged maps)")
    t.add_argument("--log-every", type=int, default=10)
    t.set_defaults(func=cmd_train)

    def budget_args(q):
        q.add_argument("--budget", type=float, help="wall-clock budget in seconds")
        q.add_argument("--deterministic", action="store_true", help="iteration budget instead of wall clock")
        q.add_argument("--iterations", type=int, help="iteration budget (with --deterministic)")
        q.add_argument("--config")

    pl = sub.add_parser("plan", help="solve one query")
    pl.add_argument("--map", required=True)
    pl.add_argument("--method", choices=bench.METHODS, default="ditree")
    pl.add_argument("--weights")
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out", required=True)
    pl.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "PSI"))
    pl.add_argument("--goal", type=float, nargs=2, metavar=("X", "Y"))
    pl.add_argument("--goal-radius", type=float, default=1.0)
    pl.add_argument("--plot", help="also write an SVG of the tree and solution")
    budget_args(pl)
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="run a scenario suite")
    b.add_argument("--suite")
    b.add_argument("--methods", nargs="+", choices=bench.METHODS)
    b.add_argument("--trials", type=int)
    b.add_argument("--seeds", help="file with one trial seed per line")
    b.add_argument("--weights")
    b.add_argument("--workers", type=int)
    b.add_argument("--report", required=True)
    budget_args(b)
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("ablate", help="sweep one DiTree parameter")
    a.add_argument("--kind", required=True, choices=bench.ABLATIONS)
    a.add_argument("--values", required=True, nargs="+")
    a.add_argument("--suite")
    a.add_argument("--trials", type=int)
    a.add_argument("--seeds")
    a.add_argument("--weights")
    a.add_argument("--workers", type=int)
    a.add_argument("--report", required=True)
    a.add_argument("--plot")
    budget_args(a)
    a.set_defaults(func=cmd_ablate)

    pt = sub.add_parser("plot", help="render a plan result as SVG")
    pt.add_argument("--map", required=True)
    pt.add_argument("--result", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--goal", type=float, nargs=2)
    pt.add_argument("--goal-radius", type=float, default=1.0)
    pt.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, bench.SuiteError, MapParseError, DatasetFormatError, WeightsFormatError,
            DataGenerationError, TrainingError, InvalidQuery, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
