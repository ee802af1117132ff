"""``derrt`` command-line entry point.

Exit status is 0 on success, 1 when planning fails and 2 for usage or
configuration errors.  All randomness comes from ``--seed``.
"""
import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import bench
from . import env as envmod
from .neural import ArchConfig
from .planner import PlannerConfig, plan
from .training import (
    CollectConfig,
    EmptyDatasetError,
    OptimConfig,
    collect_traces,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    train_hmm,
    train_recurrent,
)

DEFAULT_RADIUS = {"passage": 10.0, "bugtrap": 5.0, "roundabout": 5.0}


class UsageError(Exception):
    pass


def _dump(obj, fh=None):
    fh = sys.stdout if fh is None else fh
    fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _radius(args, kind):
    return args.step_radius if args.step_radius is not None else DEFAULT_RADIUS.get(kind, 10.0)


# -- subcommands ---------------------------------------------------------------


def cmd_env_gen(args):
    env = envmod.generate(args.kind, args.seed, n_agents=args.agents, width=args.width, height=args.height)
    envmod.save_env(env, args.output)
    if args.json:
        _dump({"output": args.output, "kind": args.kind, "seed": args.seed})
    return 0


def cmd_collect(args):
    cc = CollectConfig(kind=args.kind, n_envs=args.envs, budget=args.budget, seed=args.seed,
                       step_radius=_radius(args, args.kind), runs_per_env=args.runs)
    ds = collect_traces(cc, target=args.target)
    save_dataset(ds, args.output)
    summary = {"output": args.output, "traces": len(ds), "steps": int(sum(len(t) for t in ds.traces))}
    if args.json:
        _dump(summary)
    else:
        print(f"wrote {summary['traces']} traces ({summary['steps']} steps) to {args.output}")
    return 0


def cmd_train_hmm(args):
    ds = load_dataset(args.traces)
    model = train_hmm(ds, args.states, seed=args.seed, max_iters=args.iters)
    save_model(model, args.output)
    if args.json:
        _dump({"output": args.output, "train_loglik": list(model.train_loglik)})
    else:
        print(f"EM finished after {len(model.train_loglik)} iterations, log-likelihood {model.train_loglik[-1]:.3f}")
    return 0


def cmd_train_gru(args):
    ds = load_dataset(args.traces)
    arch = ArchConfig.for_env(ds.kind, _radius(args, ds.kind))
    model, log = train_recurrent(ds, arch, OptimConfig(lr=args.lr, epochs=args.epochs), seed=args.seed)
    save_model(model, args.output)
    if args.json:
        _dump({"output": args.output, "initial_loss": log.initial_loss, "epoch_loss": log.epoch_loss,
               "gradient_check_error": log.gradient_check_error})
    else:
        print(f"loss {log.initial_loss:.3f} -> {log.epoch_loss[-1] if log.epoch_loss else log.initial_loss:.3f}")
    return 0


def cmd_plan(args):
    env = envmod.load_env(args.env)
    model = load_model(args.model) if args.model else None
    cfg = PlannerConfig(step_radius=_radius(args, env.kind), iterations=args.samples, goal_bias=args.goal_bias,
                        seed=args.seed)
    res = plan(env, model, cfg)
    if args.tree_dump:
        with open(args.tree_dump, "w") as fh:
            for rec in res.tree.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if args.json:
        _dump(res.to_dict())
    elif res.success:
        print(f"success: length {res.length:.3f}, {len(res.path)} waypoints, valid {res.valid}/{res.proposed}")
    else:
        print(f"failure after {res.iterations} iterations, valid {res.valid}/{res.proposed}")
    return 0 if res.success else 1


def _models_from_args(args, needed):
    models = {}
    if getattr(args, "hmm_model", None):
        models[bench.HMM] = load_model(args.hmm_model)
    if getattr(args, "gru_model", None):
        models[bench.GRU] = load_model(args.gru_model)
    return models if all(p in models for p in needed) else None


def _emit_report(args, report):
    text = report.to_json(wall_time=args.wall_time)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    for row in report.aggregates():
        label = row["planner"] + (f" ({row['agents']} agents)" if "agents" in row else "")
        print(f"{label:28s} success {row['success_rate']:.3f} +- {row['success_std']:.3f}", file=sys.stderr)


def cmd_bench(args):
    planners = tuple(args.planners.split(",")) if args.planners else None
    if args.experiment == "passage":
        cfg = bench.PassageBenchConfig(rounds=args.rounds or 50, samples=args.samples or 600, seed=args.seed)
        if args.step_radius is not None:
            cfg = replace(cfg, step_radius=args.step_radius)
        if planners:
            cfg = replace(cfg, planners=planners)
        report = bench.run_passage(cfg, _models_from_args(args, [p for p in cfg.planners if p != bench.RRT]))
    elif args.experiment == "bugtrap":
        cfg = bench.BugtrapBenchConfig(seeds=args.rounds or 10, steps=args.samples or 2000, seed=args.seed,
                                       keep_trees=bool(args.heatmap))
        if planners:
            cfg = replace(cfg, planners=planners)
        report, curves, trees = bench.run_bugtrap(cfg, _models_from_args(args, [p for p in cfg.planners if p != bench.RRT]))
        if args.curves:
            curves.write_csv(args.curves)
        if args.heatmap:
            for planner, dumps in sorted(trees.items()):
                name = f"{args.heatmap}-{planner.replace('/', '_').replace('*', 'star')}.pgm"
                bench.emit_heatmap(dumps, bench.HeatmapSpec.for_kind("bugtrap", 110, 110), name)
    else:
        cfg = bench.RoundaboutBenchConfig(trials=args.rounds or 20, samples_per_step=args.samples or 100,
                                          seed=args.seed)
        if args.agents:
            cfg = replace(cfg, agent_counts=tuple(int(a) for a in args.agents.split(",")))
        if planners:
            cfg = replace(cfg, planners=planners)
        report = bench.run_roundabout(cfg, _models_from_args(args, [p for p in cfg.planners if p in (bench.HMM, bench.GRU)]))
    _emit_report(args, report)
    return 0


def _read_dump(path):
    nodes = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                nodes.append(json.loads(line)["config"][:2])
    return np.array(nodes, float).reshape(-1, 2)


def cmd_heatmap(args):
    dumps = [_read_dump(p) for p in args.dumps]
    if args.env:
        env = envmod.load_env(args.env)
        width, height, kind = env.map.width, env.map.height, env.kind
    else:
        if args.width is None or args.height is None:
            raise UsageError("heatmap needs --env or both --width and --height")
        width, height, kind = args.width, args.height, args.kind
    spec = bench.HeatmapSpec.for_kind(kind, width, height)
    if args.anchor is not None:
        spec = replace(spec, anchor=args.anchor)
    bench.emit_heatmap(dumps, spec, args.output)
    if args.json:
        _dump({"output": args.output, "nodes": int(sum(len(d) for d in dumps)), "anchor": spec.anchor})
    return 0


# -- parser --------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="derrt", description="RRT* with learned sequence-model steering")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, radius=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        if radius:
            sp.add_argument("--step-radius", type=float, default=None)

    env_p = sub.add_parser("env", help="environment tools")
    env_sub = env_p.add_subparsers(dest="env_command", required=True)
    gen = env_sub.add_parser("gen", help="generate an environment")
    common(gen, radius=False)
    gen.add_argument("--kind", choices=("passage", "bugtrap", "roundabout"), required=True)
    gen.add_argument("--agents", type=int, default=2)
    gen.add_argument("--width", type=int, default=None)
    gen.add_argument("--height", type=int, default=None)
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(func=cmd_env_gen)

    col = sub.add_parser("collect", help="harvest traces from baseline RRT* runs")
    common(col)
    col.add_argument("--kind", choices=("passage", "bugtrap", "roundabout"), required=True)
    col.add_argument("--envs", type=int, default=50)
    col.add_argument("--budget", type=int, default=3000)
    col.add_argument("--runs", type=int, default=1, help="planner runs per map")
    col.add_argument("--target", type=int, default=None, help="keep generating maps until this many traces")
    col.add_argument("-o", "--output", required=True)
    col.set_defaults(func=cmd_collect)

    th = sub.add_parser("train-hmm", help="fit an HMM steering model with EM")
    common(th, radius=False)
    th.add_argument("--traces", required=True)
    th.add_argument("--states", type=int, default=3)
    th.add_argument("--iters", type=int, default=100)
    th.add_argument("-o", "--output", required=True)
    th.set_defaults(func=cmd_train_hmm)

    tg = sub.add_parser("train-gru", help="train a recurrent steering model with SGD")
    common(tg)
    tg.add_argument("--traces", required=True)
    tg.add_argument("--epochs", type=int, default=20)
    tg.add_argument("--lr", type=float, default=1e-3)
    tg.add_argument("-o", "--output", required=True)
    tg.set_defaults(func=cmd_train_gru)

    pl = sub.add_parser("plan", help="plan once on a saved environment")
    common(pl)
    pl.add_argument("--env", required=True)
    pl.add_argument("--model", default=None)
    pl.add_argument("--samples", type=int, default=1000)
    pl.add_argument("--goal-bias", type=float, default=0.05)
    pl.add_argument("--tree-dump", default=None, help="write tree nodes as JSONL")
    pl.set_defaults(func=cmd_plan)

    be = sub.add_parser("bench", help="run an experiment and print its JSON report")
    common(be)
    be.add_argument("experiment", choices=("passage", "bugtrap", "roundabout"))
    be.add_argument("--rounds", type=int, default=None, help="rounds / seeds / trials")
    be.add_argument("--samples", type=int, default=None, help="samples per plan (per re-plan for roundabout)")
    be.add_argument("--planners", default=None, help="comma-separated subset of " + ",".join(bench.PLANNERS))
    be.add_argument("--agents", default=None, help="comma-separated agent counts (roundabout)")
    be.add_argument("--hmm-model", default=None)
    be.add_argument("--gru-model", default=None)
    be.add_argument("--curves", default=None, help="CSV path for bug-trap curves")
    be.add_argument("--heatmap", default=None, help="path prefix for bug-trap heat maps")
    be.add_argument("--wall-time", action="store_true", help="include wall-clock times (not reproducible)")
    be.add_argument("-o", "--output", default=None)
    be.set_defaults(func=cmd_bench)

    hm = sub.add_parser("heatmap", help="render tree dumps as a PGM heat map")
    common(hm, radius=False)
    hm.add_argument("dumps", nargs="+")
    hm.add_argument("--env", default=None)
    hm.add_argument("--kind", default="passage")
    hm.add_argument("--width", type=int, default=None)
    hm.add_argument("--height", type=int, default=None)
    hm.add_argument("--anchor", type=float, default=None)
    hm.add_argument("-o", "--output", required=True)
    hm.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, FileNotFoundError, EmptyDatasetError) as exc:
        print(f"derrt: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
