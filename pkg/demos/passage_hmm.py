"""Narrow passage: train an HMM on baseline plans, then compare success rates.

Run from the repository root:

    python3 demos/passage_hmm.py [--rounds 20]

The HMM is trained on traces from 300 x 300 maps and evaluated on wider
600 x 300 maps whose passage has been narrowed.
"""
import argparse
import time

from derrt import bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    cfg = bench.PassageBenchConfig(rounds=args.rounds, seed=args.seed, planners=(bench.RRT, bench.HMM))
    t0 = time.time()
    models = bench.train_passage_models(cfg)
    hmm = models[bench.HMM]
    print(f"trained a {hmm.n_states}-state HMM in {time.time() - t0:.1f}s "
          f"(final log-likelihood {hmm.train_loglik[-1]:.1f})")

    report = bench.run_passage(cfg, models)
    for row in report.aggregates():
        print(f"{row['planner']:12s} success {row['success_rate']:.2f} ({row['successes']}/{row['trials']})")


if __name__ == "__main__":
    main()
