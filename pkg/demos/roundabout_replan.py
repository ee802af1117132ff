"""Roundabout: re-plan around agents orbiting a central block.

    python3 demos/roundabout_replan.py [--agents 2] [--model roundabout.prm]

Shows one episode per planner on the same map and prints how the robot got
on.  With no model, only the baselines run.
"""
import argparse

from derrt import env as envmod
from derrt.planner import PlannerConfig, replan_loop
from derrt.training import load_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--agents", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--model", default=None)
    args = ap.parse_args()

    env = envmod.gen_roundabout(args.seed, args.agents)
    cfg = PlannerConfig(step_radius=5.0, goal_bias=0.0, seed=args.seed)
    runs = {"rrt*": dict(model=None), "rrt*-joint": dict(model=None, joint=True)}
    if args.model:
        runs["derrt*"] = dict(model=load_model(args.model))

    for name, kw in runs.items():
        out = replan_loop(env, kw["model"], cfg, samples_per_step=100, joint=kw.get("joint", False), max_steps=60)
        if out.success:
            status = f"reached the goal in {out.steps} steps, path {out.length:.1f}"
        elif out.collision:
            status = f"collided after {out.steps} steps"
        else:
            status = "ran out of steps"
        print(f"{name:11s} {status}")


if __name__ == "__main__":
    main()
