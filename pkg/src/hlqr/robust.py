"""Certification of the hierarchically designed gain on a non-homogeneous
plant: a Lyapunov/LMI stability test, a small-gain test on the
heterogeneity mismatch loop, and an H2 performance bound, plus the
H-infinity / H2 norm machinery they need."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import matkit
from .decomp import DecompositionPlan, LqrSpec, kron_lift
from .errors import (
    DimensionMismatch,
    NonzeroFeedthrough,
    NotHurwitz,
    PreconditionFailed,
    SolverDiverged,
)
from .lqr import controllability_ok, evaluate_cost

HINF_AXIS_RTOL = 1e-8


@dataclass(eq=False)
class HeteroModel:
    """Per-agent state-space pairs (A_i, B_i) with the assembled
    block-diagonal global matrices."""

    A_blocks: list[np.ndarray]
    B_blocks: list[np.ndarray]

    def __post_init__(self):
        if not self.A_blocks or len(self.A_blocks) != len(self.B_blocks):
            raise DimensionMismatch("need matching, nonempty A/B block lists")
        self.A_blocks = [matkit.require_square(A, "A_i") for A in self.A_blocks]
        self.B_blocks = [matkit.as_matrix(B, "B_i") for B in self.B_blocks]
        shape_a, shape_b = self.A_blocks[0].shape, self.B_blocks[0].shape
        for A, B in zip(self.A_blocks, self.B_blocks):
            if A.shape != shape_a or B.shape != shape_b or B.shape[0] != shape_a[0]:
                raise DimensionMismatch("all agents must share state/input dimensions")

    @property
    def N(self) -> int:
        return len(self.A_blocks)

    @property
    def n(self) -> int:
        return self.A_blocks[0].shape[0]

    @property
    def m(self) -> int:
        return self.B_blocks[0].shape[1]

    @property
    def A(self) -> np.ndarray:
        return sla.block_diag(*self.A_blocks)

    @property
    def B(self) -> np.ndarray:
        return sla.block_diag(*self.B_blocks)


@dataclass(eq=False)
class LtiSystem:
    """State-space realization (A, B, C, D); D defaults to zero."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        self.A = matkit.require_square(self.A, "A")
        self.B = matkit.as_matrix(self.B, "B")
        self.C = matkit.as_matrix(self.C, "C")
        if self.D is None:
            self.D = np.zeros((self.C.shape[0], self.B.shape[1]))
        self.D = matkit.as_matrix(self.D, "D")
        n = self.A.shape[0]
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionMismatch("B/C do not conform to A")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DimensionMismatch("D does not conform to B/C")


@dataclass(eq=False)
class PerformanceBound:
    """Outputs of the H2 performance bound J2 <= J2_bar + alpha * epsilon."""

    epsilon: float
    alpha: float
    j2_bar: float
    bound: float
    actual_j2: float
    holds: bool


@dataclass(eq=False)
class RobustReport:
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    a_hat: np.ndarray
    p_hat: np.ndarray
    lmi_max_eig: float
    small_gain_lhs: float | None
    small_gain_rhs: float | None
    epsilon: float | None
    alpha: float | None
    j2_bar: float | None
    bound: float | None
    actual_j2: float | None
    gain_gap: float
    verdicts: dict

    def to_json(self) -> dict:
        return {
            "lmiMaxEig": self.lmi_max_eig,
            "smallGainLhs": self.small_gain_lhs,
            "smallGainRhs": self.small_gain_rhs,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "j2Bar": self.j2_bar,
            "bound": self.bound,
            "actualJ2": self.actual_j2,
            "gainGap": self.gain_gap,
            "verdicts": self.verdicts,
        }


def transformed_pair(model: HeteroModel, plan: DecompositionPlan):
    """Transformed dynamics and their heterogeneity mismatches:
    Ahat = T_n' A T_n, Bhat = T_n' B T_m, Atilde = A - Ahat,
    Btilde = B - Bhat (both mismatches vanish for identical agents)."""
    Tn = kron_lift(plan.T, model.n)
    Tm = kron_lift(plan.T, model.m)
    A, B = model.A, model.B
    Ahat = Tn.T @ A @ Tn
    Bhat = Tn.T @ B @ Tm
    return Ahat, Bhat, A - Ahat, B - Bhat


def hetero_lift(model: HeteroModel, plan: DecompositionPlan, spec: LqrSpec):
    """Solve the transformed design problem for a heterogeneous plant.

    Returns (Atilde, Btilde, Ahat_cl, Phat, K) where (Phat, K) solve the
    Riccati equation of the transformed pair with the spec's weights and
    Ahat_cl is its closed loop (confirmed Hurwitz). Requires the global
    pair controllable and Q positive definite.
    """
    if not controllability_ok(model.A, model.B):
        raise PreconditionFailed("(A, B) of the heterogeneous plant is not controllable")
    if float(np.min(np.linalg.eigvalsh(matkit.symmetrize(spec.G1)))) <= 0:
        raise PreconditionFailed("Q must be positive definite (G1 must be PD)")
    Ahat, Bhat, Atilde, Btilde = transformed_pair(model, plan)
    Phat, K = matkit.solve_are(Ahat, Bhat, spec.Q, spec.R)
    Ahat_cl = Ahat - Bhat @ K
    if matkit.spectral_abscissa(Ahat_cl) >= 0:
        raise NotHurwitz("transformed closed loop is not Hurwitz")
    return Atilde, Btilde, Ahat_cl, Phat, K


def lmi_stability_check(a_tilde, b_tilde, p_hat, Q, R, b_global, b_hat):
    """Sufficient LMI stability test for the heterogeneous closed loop:

        P At + At' P - P Bt R^-1 Bh' P - P Bh R^-1 Bt' P - Q
            - P Bh R^-1 Bh' P  <  0

    with At/Bt the heterogeneity mismatches and Bh the transformed input
    matrix. The left side is exactly the derivative matrix of the
    Lyapunov candidate x' P x along the true closed loop (the Riccati
    identity supplies the last two terms), so a pass certifies stability
    with no false positives; failures are inconclusive. ``b_global`` is
    accepted alongside ``b_hat`` for interface completeness but the
    certificate is algebraically exact only with the transformed input
    matrix. Returns (max eigenvalue of the symmetrized left side, pass
    flag).
    """
    P = matkit.require_square(p_hat, "p_hat")

    def quad(left, right):
        return P @ left @ np.linalg.solve(R, right.T @ P)

    M = (
        P @ a_tilde
        + a_tilde.T @ P
        - quad(b_tilde, b_hat)
        - quad(b_hat, b_tilde)
        - Q
        - quad(b_hat, b_hat)
    )
    max_eig = float(np.max(np.linalg.eigvalsh(matkit.symmetrize(M))))
    return max_eig, max_eig < 0


def _sigma_max_at(sys: LtiSystem, omega: float) -> float:
    n = sys.A.shape[0]
    G = sys.C @ np.linalg.solve(1j * omega * np.eye(n) - sys.A, sys.B) + sys.D
    return float(np.linalg.svd(G, compute_uv=False)[0])


def _has_imaginary_eig(sys: LtiSystem, gamma: float) -> bool:
    """Whether the Hamiltonian pencil at level gamma has an eigenvalue on
    the imaginary axis, i.e. sigma_max(G(jw)) crosses gamma somewhere."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    Rg = gamma * gamma * np.eye(D.shape[1]) - D.T @ D
    if float(np.min(np.linalg.eigvalsh(matkit.symmetrize(Rg)))) <= 0:
        return True
    RiBt = np.linalg.solve(Rg, B.T)
    RiDtC = np.linalg.solve(Rg, D.T @ C)
    Abar = A + B @ RiDtC
    H = np.block(
        [
            [Abar, B @ RiBt],
            [-C.T @ (np.eye(D.shape[0]) + D @ np.linalg.solve(Rg, D.T)) @ C, -Abar.T],
        ]
    )
    eig = np.linalg.eigvals(H)
    scale = max(1.0, float(np.max(np.abs(eig))))
    return bool(np.any(np.abs(eig.real) <= HINF_AXIS_RTOL * scale))


def hinf_norm(sys: LtiSystem, tol: float = 1e-6) -> float:
    """H-infinity norm by bisection on the Hamiltonian imaginary-axis test.

    A lower bound comes from probing sigma_max(G(jw)) at zero, at the
    resonant frequencies of A, and on a log grid; the upper bound doubles
    until the Hamiltonian has no imaginary-axis eigenvalue. Result is
    within relative ``tol`` of the true norm. Requires A Hurwitz.
    """
    if matkit.spectral_abscissa(sys.A) >= 0:
        raise NotHurwitz("A must be Hurwitz")
    d_norm = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if float(np.linalg.norm(sys.B)) == 0.0 or float(np.linalg.norm(sys.C)) == 0.0:
        return d_norm
    eig = np.linalg.eigvals(sys.A)
    probes = [0.0] + [abs(w) for w in eig.imag if abs(w) > 0]
    scale = max(1.0, float(np.max(np.abs(eig))))
    probes += list(scale * np.logspace(-2, 2, 25))
    lo = max([d_norm] + [_sigma_max_at(sys, w) for w in probes])
    if lo <= 0.0:
        return 0.0
    hi = 2.0 * lo
    for _ in range(80):
        if not _has_imaginary_eig(sys, hi):
            break
        hi *= 2.0
    else:
        raise SolverDiverged("H-infinity upper bound search failed")
    while hi - lo > tol * lo:
        mid = 0.5 * (lo + hi)
        if _has_imaginary_eig(sys, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def h2_norm(sys: LtiSystem) -> float:
    """H2 norm sqrt(trace(C X C')) with the controllability gramian
    A X + X A' + B B' = 0; requires A Hurwitz and D = 0."""
    if float(np.linalg.norm(sys.D)) != 0.0:
        raise NonzeroFeedthrough("H2 norm requires D = 0")
    if matkit.spectral_abscissa(sys.A) >= 0:
        raise NotHurwitz("A must be Hurwitz")
    X = matkit.solve_lyapunov(sys.A.T, sys.B @ sys.B.T)
    return float(np.sqrt(max(float(np.trace(sys.C @ X @ sys.C.T)), 0.0)))


def small_gain_check(model: HeteroModel, K, a_hat, a_tilde, b_tilde):
    """Small-gain stability test for the mismatch feedback loop.

    lhs is the H-infinity norm of the open-loop plant driven into the
    mismatch output (At - Bt K), rhs the inverse norm of the nominal
    closed-loop sensitivity K (sI - Ahat_cl)^-1. Stability is certified
    when lhs < rhs. Requires the open-loop plant and Ahat_cl Hurwitz;
    a non-Hurwitz open loop makes the test inapplicable, not unstable.
    """
    A, B = model.A, model.B
    if matkit.spectral_abscissa(A) >= 0:
        raise NotHurwitz("open-loop plant must be Hurwitz for the small-gain test")
    if matkit.spectral_abscissa(a_hat) >= 0:
        raise NotHurwitz("transformed closed loop must be Hurwitz")
    K = matkit.as_matrix(K, "K")
    lhs = hinf_norm(LtiSystem(A, B, a_tilde - b_tilde @ K))
    gd = hinf_norm(LtiSystem(a_hat, np.eye(a_hat.shape[0]), -K))
    rhs = np.inf if gd == 0.0 else 1.0 / gd
    return lhs, rhs, bool(lhs < rhs)


def _series(first: LtiSystem, then: LtiSystem) -> LtiSystem:
    """Realization of the cascade: signal enters ``first``, its output
    feeds ``then``."""
    if then.B.shape[1] != first.C.shape[0]:
        raise DimensionMismatch("cascade dimensions do not match")
    n1, n2 = first.A.shape[0], then.A.shape[0]
    A = np.block(
        [
            [first.A, np.zeros((n1, n2))],
            [then.B @ first.C, then.A],
        ]
    )
    B = np.vstack([first.B, then.B @ first.D])
    C = np.hstack([then.D @ first.C, then.C])
    D = then.D @ first.D
    return LtiSystem(A, B, C, D)


def _unity_feedback_inverse(m: LtiSystem) -> LtiSystem:
    """Realization of (I - M)^-1 for strictly proper M."""
    if float(np.linalg.norm(m.D)) != 0.0:
        raise NonzeroFeedthrough("(I - M)^-1 realization needs strictly proper M")
    if m.C.shape[0] != m.B.shape[1]:
        raise DimensionMismatch("M must be square to invert I - M")
    return LtiSystem(m.A + m.B @ m.C, m.B, m.C, np.eye(m.B.shape[1]))


def performance_bound(model: HeteroModel, K, plan: DecompositionPlan,
                      spec: LqrSpec, x0) -> PerformanceBound:
    """H2 performance bound for deploying gain K on the heterogeneous plant.

    Builds the impulse-driven nominal loop eta' = Ahat_cl eta + e + x0 d(t)
    with cost output y = [sqrt(Q); -sqrt(R) K] eta, the mismatch loop
    G_sigma = (At - Bt K)(sI - A)^-1 B, and evaluates

        epsilon = ||G_sigma||_2,
        J2_bar = ||[sqrt(Q); -sqrt(R) K] (sI - Ahat_cl)^-1 x0||_2,
        bound = J2_bar + ||G_ey W||_inf
                         * (epsilon ||G_du||_inf + ||G_free||_2),

    where W = (I - G_sigma G_eu)^-1 and G_free = (At - Bt K)
    (sI - A)^-1 x0 is the plant's own initial-condition response through
    the mismatch output; alpha is reported so that bound = J2_bar +
    alpha * epsilon. The exact closed-loop J2 on the true plant is
    computed for comparison.

    Two departures from the naive all-H2 product are needed for the
    bound to actually hold: the middle factors use induced (H-infinity)
    norms, via ||G_ey W G_sigma G_du||_2 <= ||G_ey W||_inf
    ||G_sigma||_2 ||G_du||_inf, and the G_free term accounts for the
    plant subsystem starting at x0 rather than at rest (both vanish for
    a homogeneous plant). Raises ``NotHurwitz`` if any required
    realization is unstable.
    """
    K = matkit.as_matrix(K, "K")
    x0 = np.asarray(x0, dtype=float).ravel()
    Ahat, Bhat, Atilde, Btilde = transformed_pair(model, plan)
    a_hat = Ahat - Bhat @ K
    if matkit.spectral_abscissa(a_hat) >= 0:
        raise NotHurwitz("transformed closed loop is not Hurwitz")
    if matkit.spectral_abscissa(model.A) >= 0:
        raise NotHurwitz("open-loop plant must be Hurwitz for the mismatch H2 norms")
    Q, R = spec.Q, spec.R
    Cy = np.vstack([matkit.sqrtm_psd(Q), -matkit.sqrtm_psd(R) @ K])
    x0col = x0.reshape(-1, 1)
    eye = np.eye(a_hat.shape[0])

    mismatch_out = Atilde - Btilde @ K
    g_sigma = LtiSystem(model.A, model.B, mismatch_out)
    epsilon = h2_norm(g_sigma)
    j2_bar = h2_norm(LtiSystem(a_hat, x0col, Cy))
    g_du = LtiSystem(a_hat, x0col, -K)
    g_eu = LtiSystem(a_hat, eye, -K)
    g_ey = LtiSystem(a_hat, eye, Cy)
    free_h2 = h2_norm(LtiSystem(model.A, x0col, mismatch_out))
    inner = _unity_feedback_inverse(_series(g_eu, g_sigma))
    outer_inf = hinf_norm(_series(inner, g_ey))
    correction = outer_inf * (epsilon * hinf_norm(g_du) + free_h2)
    alpha = correction / epsilon if epsilon > 0 else 0.0
    bound = j2_bar + correction

    qeff = matkit.symmetrize(Q + K.T @ R @ K)
    actual = float(np.sqrt(max(evaluate_cost(model.A - model.B @ K, qeff, x0), 0.0)))
    holds = actual <= bound * (1.0 + 1e-9) + 1e-12
    return PerformanceBound(epsilon, alpha, j2_bar, bound, actual, holds)


def robust_report(model: HeteroModel, plan: DecompositionPlan, spec: LqrSpec,
                  x0, gain=None) -> RobustReport:
    """Full certification report.

    The certificates are evaluated at the transformed-Riccati gain (their
    algebra requires it); a deployed ``gain``, when supplied, is compared
    against it and used for the deployed-loop diagnostics. Checks whose
    preconditions fail are reported as None verdicts rather than errors.
    """
    Atilde, Btilde, a_hat, p_hat, k_are = hetero_lift(model, plan, spec)
    _, Bhat, _, _ = transformed_pair(model, plan)
    deployed = k_are if gain is None else matkit.as_matrix(gain, "gain")
    gain_gap = float(np.linalg.norm(deployed - k_are))

    lmi_max, lmi_pass = lmi_stability_check(
        Atilde, Btilde, p_hat, spec.Q, spec.R, model.B, Bhat
    )
    verdicts: dict = {"lmi": bool(lmi_pass)}
    lhs = rhs = None
    try:
        lhs, rhs, sg_pass = small_gain_check(model, k_are, a_hat, Atilde, Btilde)
        verdicts["small_gain"] = bool(sg_pass)
    except NotHurwitz:
        verdicts["small_gain"] = None
    perf = None
    try:
        perf = performance_bound(model, k_are, plan, spec, x0)
        verdicts["bound_holds"] = bool(perf.holds)
    except NotHurwitz:
        verdicts["bound_holds"] = None
    verdicts["deployed_stable"] = bool(
        matkit.spectral_abscissa(model.A - model.B @ deployed) < 0
    )
    return RobustReport(
        a_tilde=Atilde,
        b_tilde=Btilde,
        a_hat=a_hat,
        p_hat=p_hat,
        lmi_max_eig=lmi_max,
        small_gain_lhs=lhs,
        small_gain_rhs=rhs,
        epsilon=None if perf is None else perf.epsilon,
        alpha=None if perf is None else perf.alpha,
        j2_bar=None if perf is None else perf.j2_bar,
        bound=None if perf is None else perf.bound,
        actual_j2=None if perf is None else perf.actual_j2,
        gain_gap=gain_gap,
        verdicts=verdicts,
    )


def save_report(report: RobustReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2))
