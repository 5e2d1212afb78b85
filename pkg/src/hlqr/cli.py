"""Command-line interface.

Subcommands: ``decompose``, ``solve``, ``robust``, ``bench``. Exit codes:
0 success, 2 precondition failure, 3 solver divergence. The environment
variable ``HLQR_THREADS`` caps cluster-level parallelism.

File formats (all matrices are headerless CSV or ``{"rows","cols","data"}``
JSON, chosen by extension):

* spec file (JSON): ``{"N","n","m","G1","G2","Q0","R0","A","B"}`` where
  A/B give the nominal agent model used as the hidden simulation plant
  in model-free mode.
* model file (JSON): ``{"agents":[{"A":..,"B":..},...],
  "weights":{"G1":..,"G2":..,"Q0":..,"R0":..}}``.
* gain file (JSON): ``{"K": matrix}``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, decomp, matkit, rl, robust
from .errors import PreconditionFailed, SolverFailure
from .lqr import AgentModel, assemble_gain


def _load_spec_file(path):
    obj = json.loads(Path(path).read_text())
    spec = decomp.LqrSpec(
        N=int(obj["N"]),
        n=int(obj["n"]),
        m=int(obj["m"]),
        G1=matkit.matrix_from_json(obj["G1"]),
        G2=matkit.matrix_from_json(obj["G2"]),
        Q0=matkit.matrix_from_json(obj["Q0"]),
        R0=matkit.matrix_from_json(obj["R0"]),
    )
    plant = None
    if "A" in obj and "B" in obj:
        plant = AgentModel(matkit.matrix_from_json(obj["A"]),
                           matkit.matrix_from_json(obj["B"]))
    return spec, plant


def _load_model_file(path):
    obj = json.loads(Path(path).read_text())
    model = robust.HeteroModel(
        [matkit.matrix_from_json(a["A"]) for a in obj["agents"]],
        [matkit.matrix_from_json(a["B"]) for a in obj["agents"]],
    )
    w = obj["weights"]
    spec = decomp.LqrSpec(
        N=model.N,
        n=model.n,
        m=model.m,
        G1=matkit.matrix_from_json(w["G1"]),
        G2=matkit.matrix_from_json(w["G2"]),
        Q0=matkit.matrix_from_json(w["Q0"]),
        R0=matkit.matrix_from_json(w["R0"]),
    )
    return model, spec


def cmd_decompose(args) -> int:
    g1 = matkit.load_matrix(args.g1)
    g2 = matkit.load_matrix(args.g2)
    plan = decomp.construct_T(g1, g2, tol=args.tol)
    decomp.save_plan(plan, args.out)
    check = decomp.verify_plan(plan, g1, g2)
    print(
        f"r={plan.r} decomposable={plan.decomposable} "
        f"orth={check.orthogonality:.2e} off-block=({check.off_block_g1:.2e}, "
        f"{check.off_block_g2:.2e})"
    )
    return 0


def cmd_solve(args) -> int:
    spec, plant = _load_spec_file(args.spec)
    plan = decomp.load_plan(args.plan)
    t0 = time.perf_counter()
    if args.mode == "model-based":
        gains = []
        for i, size in enumerate(plan.cluster_sizes):
            A = matkit.kron(np.eye(size), plant.A)
            B = matkit.kron(np.eye(size), plant.B)
            Qb = matkit.kron(plan.phi_blocks[i], spec.Q0)
            Rb = matkit.kron(plan.psi_blocks[i], spec.R0)
            _, K = matkit.solve_are(A, B, Qb, Rb)
            gains.append(K)
        K = assemble_gain(plan, gains, spec.n, spec.m)
        stats = []
    else:
        if plant is None:
            raise PreconditionFailed("spec file must carry A/B for model-free solving")
        k_agent = bench.derive_initial_gain(plant.A, plant.B, seed=args.seed)
        config = rl.HierarchicalConfig(
            excitation=decomp.ExcitationConfig(seed=args.seed),
            initial_gains=[matkit.kron(np.eye(s), k_agent) for s in plan.cluster_sizes],
        )
        K, stats = rl.hierarchical_solve(spec, plan, plant, config)
    wall_ms = 1e3 * (time.perf_counter() - t0)
    Path(args.out).write_text(json.dumps(rl.result_to_json(K, stats, wall_ms)))
    print(f"solved mode={args.mode} r={plan.r} wall_ms={wall_ms:.1f}")
    return 0


def cmd_robust(args) -> int:
    model, spec = _load_model_file(args.model)
    plan = decomp.load_plan(args.plan)
    gain_obj = json.loads(Path(args.gain).read_text())
    K = matkit.matrix_from_json(gain_obj["K"])
    x0 = matkit.load_vector(args.x0)
    report = robust.robust_report(model, plan, spec, x0, gain=K)
    robust.save_report(report, args.out)
    print(json.dumps(report.verdicts))
    return 0


def cmd_bench(args) -> int:
    config = bench.BenchConfig(
        N=args.n,
        seed=args.seed,
        hetero=args.hetero,
        mode="heterogeneous" if args.hetero > 0 else "homogeneous",
        solvers=tuple(args.solvers.split(",")),
        timeout_s=args.timeout_s,
        out=args.out,
    )
    report = bench.run_bench(config)
    print(report.to_csv(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlqr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="construct the decomposing transformation")
    p.add_argument("--g1", required=True)
    p.add_argument("--g2", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("solve", help="solve per-cluster problems and assemble the gain")
    p.add_argument("--spec", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--mode", choices=("model-based", "model-free"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("robust", help="certify a gain on a heterogeneous plant")
    p.add_argument("--plan", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--gain", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("bench", help="run the solver comparison benchmark")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hetero", type=float, default=0.0)
    p.add_argument("--timeout-s", dest="timeout_s", type=float, default=300.0)
    p.add_argument("--solvers", default="model-based,hierarchical-rl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, PreconditionFailed):
        return 2
    if isinstance(exc, SolverFailure):
        return 3
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PreconditionFailed, SolverFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
