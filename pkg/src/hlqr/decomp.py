"""Decomposability analysis for LQR problems with graph-structured weights.

Decides when the cost weights Q = G1 (x) Q0 and R = G2 (x) R0 admit an
orthogonal coordinate change that splits the global problem into
independent cluster problems, constructs that transformation, and
projects the problem data onto the clusters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import matkit
from .errors import (
    DimensionMismatch,
    NotOrthonormal,
    NotSupported,
    PreconditionFailed,
)

# Inner products of unit eigenvectors above PAIRING_SCALE * N count as links
# when matching the two eigenbases.
PAIRING_SCALE = 1e-8


@dataclass(eq=False)
class LqrSpec:
    """Structured LQR problem: N agents with per-agent state dim n and input
    dim m, weights Q = G1 (x) Q0 (G1 PSD) and R = G2 (x) R0 (G2, Q0, R0 PD)."""

    N: int
    n: int
    m: int
    G1: np.ndarray
    G2: np.ndarray
    Q0: np.ndarray
    R0: np.ndarray

    def __post_init__(self):
        self.G1 = matkit.require_square(self.G1, "G1")
        self.G2 = matkit.require_square(self.G2, "G2")
        self.Q0 = matkit.require_square(self.Q0, "Q0")
        self.R0 = matkit.require_square(self.R0, "R0")
        if self.G1.shape[0] != self.N or self.G2.shape[0] != self.N:
            raise DimensionMismatch("G1/G2 must be N x N")
        if self.Q0.shape[0] != self.n or self.R0.shape[0] != self.m:
            raise DimensionMismatch("Q0 must be n x n and R0 m x m")
        for name, M in (("G1", self.G1), ("G2", self.G2), ("Q0", self.Q0), ("R0", self.R0)):
            if not matkit.is_symmetric(M):
                raise PreconditionFailed(f"{name} must be symmetric")
        if float(np.min(np.linalg.eigvalsh(matkit.symmetrize(self.G1)))) < -1e-10:
            raise PreconditionFailed("G1 must be positive semidefinite")
        for name, M in (("G2", self.G2), ("Q0", self.Q0), ("R0", self.R0)):
            if float(np.min(np.linalg.eigvalsh(matkit.symmetrize(M)))) <= 0:
                raise PreconditionFailed(f"{name} must be positive definite")

    @property
    def Q(self) -> np.ndarray:
        return matkit.kron(self.G1, self.Q0)

    @property
    def R(self) -> np.ndarray:
        return matkit.kron(self.G2, self.R0)


@dataclass(eq=False)
class ExcitationConfig:
    """Sum-of-sinusoids exploration signal, one draw per input channel."""

    component_count: int = 12
    frequency_range: tuple[float, float] = (0.1, 10.0)
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.component_count < 1:
            raise PreconditionFailed("component_count must be >= 1")
        lo, hi = self.frequency_range
        if not (0 < lo <= hi):
            raise PreconditionFailed("frequency_range must be positive and ordered")
        if self.amplitude < 0:
            raise PreconditionFailed("amplitude must be nonnegative")


def unknown_count(state_dim: int, input_dim: int) -> int:
    """Number of regression unknowns: symmetric P plus a full gain."""
    return state_dim * (state_dim + 1) // 2 + input_dim * state_dim


@dataclass(eq=False)
class ClusterProblem:
    """One decoupled LQR instance in transformed coordinates."""

    state_dim: int
    input_dim: int
    Qblock: np.ndarray
    Rblock: np.ndarray
    initial_gain: np.ndarray | None = None
    excitation: ExcitationConfig | None = None
    sample_interval: float = 0.1
    window_count: int | None = None

    def __post_init__(self):
        self.Qblock = matkit.require_square(self.Qblock, "Qblock")
        self.Rblock = matkit.require_square(self.Rblock, "Rblock")
        if self.Qblock.shape[0] != self.state_dim or self.Rblock.shape[0] != self.input_dim:
            raise DimensionMismatch("Qblock/Rblock sizes must match cluster dims")
        if self.sample_interval <= 0:
            raise PreconditionFailed("sample_interval must be positive")
        if self.window_count is not None and self.window_count < self.q:
            raise PreconditionFailed(
                f"window_count {self.window_count} below unknown count {self.q}"
            )

    @property
    def q(self) -> int:
        return unknown_count(self.state_dim, self.input_dim)


@dataclass(eq=False)
class DecompositionPlan:
    """Orthogonal T with cluster sizes N_1..N_r and the diagonal blocks of
    T G1 T' (phi) and T G2 T' (psi)."""

    T: np.ndarray
    cluster_sizes: tuple[int, ...]
    phi_blocks: list[np.ndarray]
    psi_blocks: list[np.ndarray]
    decomposable: bool = True

    @property
    def r(self) -> int:
        return len(self.cluster_sizes)

    def offsets(self) -> list[int]:
        out, acc = [], 0
        for s in self.cluster_sizes:
            out.append(acc)
            acc += s
        return out


@dataclass
class PlanCheck:
    """Residual report from :func:`verify_plan`."""

    orthogonality: float
    off_block_g1: float
    off_block_g2: float
    passed: bool


def kron_lift(T, d: int) -> np.ndarray:
    """Lift an N x N transform to act blockwise on stacked d-vectors."""
    return matkit.kron(T, np.eye(d))


def check_commute(G1, G2, tol: float = 1e-8) -> bool:
    """True iff ||G1 G2 - G2 G1||_F <= tol * ||G1||_F * ||G2||_F."""
    A = matkit.require_square(G1, "G1")
    B = matkit.require_square(G2, "G2")
    if A.shape != B.shape:
        raise DimensionMismatch(f"G1 is {A.shape}, G2 is {B.shape}")
    comm = float(np.linalg.norm(A @ B - B @ A))
    return comm <= tol * float(np.linalg.norm(A)) * float(np.linalg.norm(B))


def invariant_subspace_check(G, Gamma, tol: float = 1e-8) -> bool:
    """True iff the column span of the orthonormal Gamma is G-invariant."""
    G = matkit.require_square(G, "G")
    Gamma = matkit.as_matrix(Gamma, "Gamma")
    N, s = Gamma.shape
    if N != G.shape[0] or s >= N:
        raise DimensionMismatch("Gamma must be N x s with s < N")
    if float(np.linalg.norm(Gamma.T @ Gamma - np.eye(s))) > tol:
        raise NotOrthonormal("Gamma columns must be orthonormal")
    defect = G @ Gamma - Gamma @ (Gamma.T @ G @ Gamma)
    return float(np.linalg.norm(defect)) <= tol * float(np.linalg.norm(G))


def _sign_fix_rows(F: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    out = F.copy()
    for i in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


def _all_gaps_above(values: np.ndarray, threshold: float) -> bool:
    if values.size < 2:
        return True
    return bool(np.min(np.diff(values)) > threshold)


class _Dsu:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def _paired_groups(gram: np.ndarray, threshold: float):
    """Transitively closed eigenvector matching from one N x N Gram matrix.

    Row eigenvectors i1, i2 of the first matrix land in the same group iff
    they are linked through some column j with both |gram[i1, j]| and
    |gram[i2, j]| above threshold. Returns (p_groups, q_groups) ordered by
    smallest row index, or None when any group is unbalanced.
    """
    N = gram.shape[0]
    dsu = _Dsu(2 * N)
    rows, cols = np.nonzero(np.abs(gram) > threshold)
    for i, j in zip(rows, cols):
        dsu.union(int(i), N + int(j))
    members: dict[int, tuple[list[int], list[int]]] = {}
    for node in range(2 * N):
        root = dsu.find(node)
        p, q = members.setdefault(root, ([], []))
        (p if node < N else q).append(node if node < N else node - N)
    groups = sorted(members.values(), key=lambda pq: min(pq[0]) if pq[0] else N)
    for p, q in groups:
        if len(p) != len(q) or not p:
            return None
    return [p for p, _ in groups], [q for _, q in groups]


def _common_eigenbasis_rows(G1, G2, tol: float) -> np.ndarray:
    """Rows of T for a commuting pair: eigendecompose G1, then diagonalize
    G2 restricted to each repeated-eigenvalue subspace of G1."""
    e1 = matkit.sym_eig(G1, tol)
    gap = tol * max(float(np.linalg.norm(G1)), 1e-300)
    cols = []
    start = 0
    N = G1.shape[0]
    while start < N:
        stop = start + 1
        while stop < N and e1.values[stop] - e1.values[stop - 1] <= gap:
            stop += 1
        V = e1.vectors[:, start:stop]
        inner = matkit.symmetrize(V.T @ G2 @ V)
        _, Z = np.linalg.eigh(inner)
        cols.append(V @ Z)
        start = stop
    T = _sign_fix_rows(np.hstack(cols).T)
    off = T @ G2 @ T.T
    off = off - np.diag(np.diag(off))
    if float(np.linalg.norm(off)) > max(tol * float(np.linalg.norm(G2)), 1e-12):
        raise NotSupported("common eigenbasis construction failed to diagonalize G2")
    return T


def _extract_blocks(M: np.ndarray, sizes: tuple[int, ...]) -> list[np.ndarray]:
    blocks, acc = [], 0
    for s in sizes:
        blocks.append(matkit.symmetrize(M[acc : acc + s, acc : acc + s]).copy())
        acc += s
    return blocks


def _trivial_plan(G1: np.ndarray, G2: np.ndarray) -> DecompositionPlan:
    N = G1.shape[0]
    return DecompositionPlan(
        T=np.eye(N),
        cluster_sizes=(N,),
        phi_blocks=[matkit.symmetrize(G1).copy()],
        psi_blocks=[matkit.symmetrize(G2).copy()],
        decomposable=False,
    )


def construct_T(G1, G2, tol: float = 1e-8) -> DecompositionPlan:
    """Construct the orthogonal transformation that simultaneously
    block-diagonalizes G1 and G2 with the finest cluster structure.

    When both matrices have distinct eigenvalues (gaps above
    tol * ||G||_F), the two eigenbases are matched through their Gram
    matrix: eigenvectors linked by a nonzero inner product share a
    cluster, links are closed transitively, matched groups are permuted
    to be contiguous, and T = E1 E2' E1. With repeated eigenvalues a
    commuting pair falls back to a common eigenbasis (complete
    decomposition); a non-commuting pair is unsupported. If no split
    with r > 1 exists the trivial single-cluster plan is returned with
    ``decomposable=False``.
    """
    G1 = matkit.require_square(G1, "G1")
    G2 = matkit.require_square(G2, "G2")
    if G1.shape != G2.shape:
        raise DimensionMismatch(f"G1 is {G1.shape}, G2 is {G2.shape}")
    for name, M in (("G1", G1), ("G2", G2)):
        if not matkit.is_symmetric(M, tol):
            raise PreconditionFailed(f"{name} must be symmetric")
    if float(np.min(np.linalg.eigvalsh(matkit.symmetrize(G1)))) < -1e-10:
        raise PreconditionFailed("G1 must be positive semidefinite")
    if float(np.min(np.linalg.eigvalsh(matkit.symmetrize(G2)))) <= 0:
        raise PreconditionFailed("G2 must be positive definite")

    N = G1.shape[0]
    e1 = matkit.sym_eig(G1, tol)
    e2 = matkit.sym_eig(G2, tol)
    distinct = _all_gaps_above(e1.values, tol * float(np.linalg.norm(G1))) and _all_gaps_above(
        e2.values, tol * float(np.linalg.norm(G2))
    )

    if not distinct:
        if not check_commute(G1, G2, tol):
            raise NotSupported(
                "repeated eigenvalues with non-commuting G1, G2 are not supported"
            )
        T = _common_eigenbasis_rows(G1, G2, tol)
        sizes = (1,) * N
    else:
        F1 = _sign_fix_rows(e1.vectors.T)
        F2 = _sign_fix_rows(e2.vectors.T)
        gram = F1 @ F2.T
        paired = _paired_groups(gram, PAIRING_SCALE * N)
        if paired is None:
            return _trivial_plan(G1, G2)
        p_groups, q_groups = paired
        if len(p_groups) == 1:
            return _trivial_plan(G1, G2)
        perm1 = [i for g in p_groups for i in g]
        perm2 = [j for g in q_groups for j in g]
        E1, E2 = F1[perm1], F2[perm2]
        T = (E1 @ E2.T) @ E1
        sizes = tuple(len(g) for g in p_groups)

    plan = DecompositionPlan(
        T=T,
        cluster_sizes=sizes,
        phi_blocks=_extract_blocks(T @ G1 @ T.T, sizes),
        psi_blocks=_extract_blocks(T @ G2 @ T.T, sizes),
        decomposable=len(sizes) > 1,
    )
    return plan


def verify_plan(plan: DecompositionPlan, G1, G2, tol: float = matkit.DEFAULT_TOL,
                orth_tol: float = matkit.ORTH_TOL) -> PlanCheck:
    """Diagnostic residuals for a plan: orthogonality of T and the distance
    of each transformed weight matrix from the plan's block diagonal."""
    G1 = matkit.require_square(G1, "G1")
    G2 = matkit.require_square(G2, "G2")
    T = matkit.require_square(plan.T, "T")
    if T.shape != G1.shape or sum(plan.cluster_sizes) != T.shape[0]:
        raise DimensionMismatch("plan dimensions do not match G1/G2")
    orth = float(np.linalg.norm(T @ T.T - np.eye(T.shape[0])))
    d1 = float(np.linalg.norm(T @ G1 @ T.T - sla.block_diag(*plan.phi_blocks)))
    d2 = float(np.linalg.norm(T @ G2 @ T.T - sla.block_diag(*plan.psi_blocks)))
    passed = (
        orth <= orth_tol
        and d1 <= tol * float(np.linalg.norm(G1))
        and d2 <= tol * float(np.linalg.norm(G2))
    )
    return PlanCheck(orth, d1, d2, passed)


def project_problem(
    spec: LqrSpec,
    plan: DecompositionPlan,
    excitation: ExcitationConfig | None = None,
    sample_interval: float = 0.1,
    window_factor: int = 2,
) -> list[ClusterProblem]:
    """Split the structured problem into its cluster problems.

    Cluster i gets weights Qblock = phi_i (x) Q0 and Rblock = psi_i (x) R0,
    a window count of ``window_factor`` times its regression unknown count,
    and an excitation seeded per cluster. The plan must verify against the
    spec's weights.
    """
    check = verify_plan(plan, spec.G1, spec.G2)
    if not check.passed:
        raise PreconditionFailed("plan does not verify against this spec")
    problems = []
    for i, size in enumerate(plan.cluster_sizes):
        nc, mc = spec.n * size, spec.m * size
        exc = replace(excitation, seed=excitation.seed + i) if excitation else None
        problems.append(
            ClusterProblem(
                state_dim=nc,
                input_dim=mc,
                Qblock=matkit.kron(plan.phi_blocks[i], spec.Q0),
                Rblock=matkit.kron(plan.psi_blocks[i], spec.R0),
                excitation=exc,
                sample_interval=sample_interval,
                window_count=window_factor * unknown_count(nc, mc),
            )
        )
    return problems


# ---------------------------------------------------------------------------
# Plan serialization

def plan_to_json(plan: DecompositionPlan) -> dict:
    return {
        "T": matkit.matrix_to_json(plan.T),
        "clusterSizes": list(plan.cluster_sizes),
        "phi": [matkit.matrix_to_json(b) for b in plan.phi_blocks],
        "psi": [matkit.matrix_to_json(b) for b in plan.psi_blocks],
        "r": plan.r,
        "decomposable": bool(plan.decomposable),
    }


def plan_from_json(obj: dict) -> DecompositionPlan:
    return DecompositionPlan(
        T=matkit.matrix_from_json(obj["T"]),
        cluster_sizes=tuple(int(s) for s in obj["clusterSizes"]),
        phi_blocks=[matkit.matrix_from_json(b) for b in obj["phi"]],
        psi_blocks=[matkit.matrix_from_json(b) for b in obj["psi"]],
        decomposable=bool(obj["decomposable"]),
    )


def save_plan(plan: DecompositionPlan, path) -> None:
    Path(path).write_text(json.dumps(plan_to_json(plan)))


def load_plan(path) -> DecompositionPlan:
    return plan_from_json(json.loads(Path(path).read_text()))
