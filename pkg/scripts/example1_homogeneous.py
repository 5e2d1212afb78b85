#!/usr/bin/env python3
"""Homogeneous formation benchmark: N double-integrator agents with
consensus-style weights, comparing the model-based solution against the
hierarchical model-free one (and optionally global model-free RL)."""

import argparse

from hlqr.bench import BenchConfig, run_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100, help="number of agents")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--with-global-rl", action="store_true",
                    help="also run the (slow) unstructured model-free solver")
    ap.add_argument("--timeout-s", type=float, default=300.0)
    ap.add_argument("--out", default=None, help="directory for bench.json/bench.csv")
    args = ap.parse_args()

    solvers = ("model-based", "hierarchical-rl")
    if args.with_global_rl:
        solvers += ("global-rl",)
    config = BenchConfig(N=args.n, seed=args.seed, solvers=solvers,
                         timeout_s=args.timeout_s, out=args.out)
    report = run_bench(config)
    print(report.to_csv(), end="")
    rows = {r.solver: r for r in report.rows}
    if rows["model-based"].status == "ok" and rows["hierarchical-rl"].status == "ok":
        mb, hrl = rows["model-based"], rows["hierarchical-rl"]
        print(f"# rel cost gap: {(hrl.J - mb.J) / mb.J:.3e}")
        print(f"# gain gap (fro): {hrl.gain_gap_fro:.3e}")


if __name__ == "__main__":
    main()
