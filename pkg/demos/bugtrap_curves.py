"""Bug trap: how often does each planner propose a collision-free move?

    python3 demos/bugtrap_curves.py --model bugtrap.prm [--seeds 4]

Train the model first, for example:

    derrt collect --kind bugtrap --envs 200 --runs 2 --budget 4000 --target 200 -o bt.jsonl
    derrt train-gru --traces bt.jsonl --epochs 3 --seed 1 -o bugtrap.prm

Without ``--model`` only baseline RRT* is run.  Writes the per-checkpoint
curves to ``bugtrap_curves.csv`` and one heat map per planner.
"""
import argparse

from derrt import bench
from derrt.training import load_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default=None)
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args()

    models = {}
    planners = [bench.RRT]
    if args.model:
        models[bench.GRU] = load_model(args.model)
        planners.append(bench.GRU)
    cfg = bench.BugtrapBenchConfig(seeds=args.seeds, steps=args.steps, planners=tuple(planners), keep_trees=True)
    report, curves, trees = bench.run_bugtrap(cfg, models)
    curves.write_csv("bugtrap_curves.csv")

    marks = range(cfg.checkpoint_every, cfg.steps + 1, 4 * cfg.checkpoint_every)
    print("samples  " + "  ".join(f"{p:>12s}" for p in planners))
    for n in marks:
        cells = [curves.median(p, n) for p in planners]
        print(f"{n:7d}  " + "  ".join(f"{c:12.3f}" for c in cells))
    for planner, dumps in trees.items():
        name = "heatmap-" + planner.replace("/", "_").replace("*", "star") + ".pgm"
        bench.emit_heatmap(dumps, bench.HeatmapSpec.for_kind("bugtrap", 110, 110), name)
        print("wrote", name)


if __name__ == "__main__":
    main()
