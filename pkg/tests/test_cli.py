import json

import numpy as np
import pytest

from hlqr import cli, matkit
from hlqr.bench import build_example, BenchConfig
from hlqr.errors import (
    ExcitationDeficient,
    PreconditionFailed,
    RegressionSingular,
    SolverDiverged,
)


@pytest.fixture
def toy_files(tmp_path):
    """Spec/weights/plant files for a small solvable problem."""
    config = BenchConfig(N=2, seed=3)
    spec, model, x0 = build_example(config)
    spec_obj = {
        "N": spec.N,
        "n": spec.n,
        "m": spec.m,
        "G1": matkit.matrix_to_json(spec.G1),
        "G2": matkit.matrix_to_json(spec.G2),
        "Q0": matkit.matrix_to_json(spec.Q0),
        "R0": matkit.matrix_to_json(spec.R0),
        "A": matkit.matrix_to_json(model.A_blocks[0]),
        "B": matkit.matrix_to_json(model.B_blocks[0]),
    }
    (tmp_path / "spec.json").write_text(json.dumps(spec_obj))
    matkit.save_matrix_csv(spec.G1, tmp_path / "g1.csv")
    matkit.save_matrix_json(spec.G2, tmp_path / "g2.json")
    model_obj = {
        "agents": [
            {"A": matkit.matrix_to_json(A), "B": matkit.matrix_to_json(B)}
            for A, B in zip(model.A_blocks, model.B_blocks)
        ],
        "weights": {
            "G1": matkit.matrix_to_json(spec.G1),
            "G2": matkit.matrix_to_json(spec.G2),
            "Q0": matkit.matrix_to_json(spec.Q0),
            "R0": matkit.matrix_to_json(spec.R0),
        },
    }
    (tmp_path / "model.json").write_text(json.dumps(model_obj))
    matkit.save_matrix_csv(x0.reshape(-1, 1), tmp_path / "x0.csv")
    return tmp_path, spec, model, x0


def test_decompose_solve_roundtrip(toy_files):
    tmp, spec, model, x0 = toy_files
    rc = cli.main([
        "decompose", "--g1", str(tmp / "g1.csv"), "--g2", str(tmp / "g2.json"),
        "--out", str(tmp / "plan.json"),
    ])
    assert rc == 0
    plan_obj = json.loads((tmp / "plan.json").read_text())
    assert plan_obj["decomposable"] is True and plan_obj["r"] == 2

    rc = cli.main([
        "solve", "--spec", str(tmp / "spec.json"), "--plan", str(tmp / "plan.json"),
        "--mode", "model-based", "--out", str(tmp / "gain_mb.json"),
    ])
    assert rc == 0
    rc = cli.main([
        "solve", "--spec", str(tmp / "spec.json"), "--plan", str(tmp / "plan.json"),
        "--mode", "model-free", "--out", str(tmp / "gain_mf.json"),
    ])
    assert rc == 0
    K_mb = matkit.matrix_from_json(json.loads((tmp / "gain_mb.json").read_text())["K"])
    obj_mf = json.loads((tmp / "gain_mf.json").read_text())
    K_mf = matkit.matrix_from_json(obj_mf["K"])
    assert obj_mf["perCluster"]
    assert np.linalg.norm(K_mf - K_mb) / np.linalg.norm(K_mb) <= 1e-2


def test_robust_command(toy_files):
    tmp, spec, model, x0 = toy_files
    cli.main([
        "decompose", "--g1", str(tmp / "g1.csv"), "--g2", str(tmp / "g2.json"),
        "--out", str(tmp / "plan.json"),
    ])
    cli.main([
        "solve", "--spec", str(tmp / "spec.json"), "--plan", str(tmp / "plan.json"),
        "--mode", "model-based", "--out", str(tmp / "gain.json"),
    ])
    rc = cli.main([
        "robust", "--plan", str(tmp / "plan.json"), "--model", str(tmp / "model.json"),
        "--gain", str(tmp / "gain.json"), "--x0", str(tmp / "x0.csv"),
        "--out", str(tmp / "report.json"),
    ])
    assert rc == 0
    report = json.loads((tmp / "report.json").read_text())
    assert report["verdicts"]["lmi"] is True
    assert report["verdicts"]["deployed_stable"] is True


def test_bench_command(tmp_path):
    rc = cli.main([
        "bench", "--n", "2", "--seed", "3", "--out", str(tmp_path / "out"),
    ])
    assert rc == 0
    assert (tmp_path / "out" / "bench.csv").exists()
    assert (tmp_path / "out" / "bench.json").exists()


def test_precondition_exit_code(tmp_path):
    # G2 not positive definite trips the decomposition precondition
    matkit.save_matrix_csv(np.eye(2), tmp_path / "g1.csv")
    matkit.save_matrix_csv(np.diag([1.0, 0.0]), tmp_path / "g2.csv")
    rc = cli.main([
        "decompose", "--g1", str(tmp_path / "g1.csv"),
        "--g2", str(tmp_path / "g2.csv"), "--out", str(tmp_path / "p.json"),
    ])
    assert rc == 2


def test_exit_code_mapping():
    assert cli.exit_code_for(PreconditionFailed("x")) == 2
    assert cli.exit_code_for(ExcitationDeficient("x")) == 2
    assert cli.exit_code_for(SolverDiverged("x")) == 3
    assert cli.exit_code_for(RegressionSingular("x")) == 3
    assert cli.exit_code_for(ValueError("x")) == 1
