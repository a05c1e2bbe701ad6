import logging
import math
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from app.config import get_settings
from app.exceptions import InternalError, InvalidArgumentError, SolverFailureError
from app.fem.fe1d import (
    Constraint,
    Family,
    FESpace1D,
    MatrixKind,
    PairingKind,
    assemble_1d,
    hminus1_gram,
    pairing_matrix,
)
from app.fem.linalg import deflated_pencil, power_iteration, smallest_generalized_eig, sparse_factor
from app.fem.norms import ReferenceSpace, discrete_xnorm, mesh_dependent_norm, xnorm_gram
from app.fem.problems import ProblemDef, discrete_solution
from app.fem.st_assembly import SpaceTimeSpace, STOperator, assemble_st, kronecker_gram
from app.schemas import DegradationResult, InfSupResult, QuasiOptConstants

logger = logging.getLogger(__name__)


# Above this excess a unit-bounded constant signals an assembly error, not round-off
_UNIT_EXCESS_TOL = 1e-8


def _gamma(lam: float, what: str) -> float:
    if not lam > 0.0:
        raise SolverFailureError(f"{what}: smallest eigenvalue {lam:.3e} is not positive.")
    gamma = math.sqrt(lam)
    if gamma > 1.0 + _UNIT_EXCESS_TOL:
        raise InternalError(f"{what}: constant {gamma:.12g} exceeds one.")
    if gamma > 1.0 + 1e-12:
        logger.warning("%s: constant %.15g exceeds one by round-off, reported as 1", what, gamma)
    return min(gamma, 1.0)



def _complement(kernel: np.ndarray) -> Optional[np.ndarray]:
    """Orthonormal basis of the orthogonal complement of span(kernel), None if the kernel is empty."""
    if kernel.shape[1] == 0:
        return None
    return la.null_space(kernel.T)


def _restricted(K, W, kernel: np.ndarray):
    Q = _complement(kernel)
    if Q is None:
        return K, W
    return deflated_pencil(K, W, Q)


# ==================== INF-SUP CONSTANTS ====================


def spatial_infsup(Xx: FESpace1D) -> InfSupResult:
    """inf_u sup_v <u, v> / (||u||_{V'} ||v||_V) over a zero-both P1 space."""
    if Xx.family != Family.P1 or Xx.constraint != Constraint.ZERO_BOTH:
        raise InvalidArgumentError("spatial_infsup needs a zero-both P1 space.")
    M = assemble_1d(Xx, MatrixKind.MASS)
    A = assemble_1d(Xx, MatrixKind.STIFFNESS)
    K = np.asarray(M.T @ sparse_factor(A, "spatial stiffness").solve(M.toarray()))
    eig = smallest_generalized_eig(K, hminus1_gram(Xx), "spatial inf-sup")
    return InfSupResult(gamma=_gamma(eig.value, "spatial inf-sup"), method="spatial-only", diagnostics=eig.diagnostics)


def _time_kernel(Xt: FESpace1D) -> np.ndarray:
    """Orthonormal basis of {u in Xt : u' = 0}."""
    K = assemble_1d(Xt, MatrixKind.STIFFNESS).toarray()
    return la.null_space(K, rcond=1e-10)


def temporal_infsup(Xt: FESpace1D, Yt: FESpace1D) -> InfSupResult:
    """min over u with u' != 0 of ||P_Yt u'|| / ||u'|| (L2 in time)."""
    if Xt.family != Family.P1:
        raise InvalidArgumentError("temporal_infsup needs a continuous trial space.")
    D = pairing_matrix(Yt, Xt, PairingKind.VALUE_DERIVATIVE)
    MY = pairing_matrix(Yt, Yt, PairingKind.VALUE_VALUE)
    num = np.asarray(D.T @ sparse_factor(MY, "temporal test mass").solve(D.toarray()))
    den = assemble_1d(Xt, MatrixKind.STIFFNESS).toarray()
    kernel = _time_kernel(Xt)
    eig = smallest_generalized_eig(*_restricted(num, den, kernel), "temporal inf-sup")
    return InfSupResult(
        gamma=_gamma(eig.value, "temporal inf-sup"),
        method="temporal-only",
        kernel_dim=kernel.shape[1],
        diagnostics=eig.diagnostics,
    )


def spacetime_infsup(
    Xd: SpaceTimeSpace,
    Yd: SpaceTimeSpace,
    mode: str = "factorized",
    ref_factor: Optional[int] = None,
) -> InfSupResult:
    """inf over u in Xd of sup_{v in Yd} (d/dt u)(v) / (||d/dt u||_{Y'} ||v||_Y).

    ``factorized`` multiplies the temporal and spatial constants; ``full``
    solves the space-time pencil with the reference-space dual norm in the
    denominator.
    """
    if not Xd.spatial.partition.same_as(Yd.spatial.partition):
        raise InvalidArgumentError("spacetime_infsup needs a common spatial factor.")
    if mode == "factorized":
        temporal = temporal_infsup(Xd.temporal, Yd.temporal)
        spatial = spatial_infsup(Xd.spatial)
        return InfSupResult(
            gamma=temporal.gamma * spatial.gamma,
            method="factorized",
            kernel_dim=temporal.kernel_dim * Xd.spatial.dim,
            diagnostics={"temporal_gamma": temporal.gamma, "spatial_gamma": spatial.gamma},
        )
    if mode != "full":
        raise InvalidArgumentError(f"Unknown inf-sup mode '{mode}'.")

    Dt = assemble_st(Xd, Yd, STOperator.DT)
    num = np.asarray(Dt.T @ kronecker_gram(Yd).solve(Dt.toarray()))
    ref = ReferenceSpace(Xd, ref_factor)
    Dr = ref.dt_pairing
    den = np.asarray(Dr.T @ ref.gram.solve(Dr.toarray()))
    kernel = np.kron(_time_kernel(Xd.temporal), np.eye(Xd.spatial.dim))
    eig = smallest_generalized_eig(*_restricted(num, den, kernel), "space-time inf-sup")
    logger.debug("spacetime_infsup full: dim=%d, kernel=%d, lambda=%.6g", Xd.dim, kernel.shape[1], eig.value)
    return InfSupResult(
        gamma=_gamma(eig.value, "space-time inf-sup"),
        method="full",
        kernel_dim=kernel.shape[1],
        diagnostics=dict(eig.diagnostics, ref_factor=float(ref.ref_factor)),
    )


# ==================== QUASI-OPTIMALITY ====================


def quasiopt_constants(gamma: float, aa_norm: float) -> QuasiOptConstants:
    """rho in [0, 1) solving gamma^2 (rho^2 - rho) + a^2 (rho - 1) + rho = 0, and the constant C."""
    if not (math.isfinite(gamma) and 0.0 < gamma <= 1.0 + 1e-10):
        raise InvalidArgumentError(f"gamma must lie in (0, 1], got {gamma}.")
    if not (math.isfinite(aa_norm) and aa_norm >= 0.0):
        raise InvalidArgumentError(f"aa_norm must be >= 0, got {aa_norm}.")
    g2, a2 = gamma * gamma, aa_norm * aa_norm

    if aa_norm == 0.0:
        rho = 0.0
    else:
        b = 1.0 + a2 - g2
        rho = 2.0 * a2 / (b + math.sqrt(b * b + 4.0 * g2 * a2))
    residual = g2 * (rho * rho - rho) + a2 * (rho - 1.0) + rho
    if not (0.0 <= rho < 1.0) or abs(residual) > 1e-12 * (1.0 + a2):
        raise InternalError(f"No admissible root: rho={rho!r}, residual={residual:.3e}.")

    C = (3.0 + a2) * (math.sqrt(3.0) + aa_norm) / ((1.0 - rho) * g2)
    return QuasiOptConstants(rho=rho, C=C, gamma_in=gamma, aa_norm_in=aa_norm)


def aa_norm_estimate(Yd: SpaceTimeSpace, beta: float) -> float:
    """||Aa|| as a map Y -> Y' restricted to Yd, by power iteration on G^{-1} Aa^T G^{-1} Aa."""
    if beta < 0.0:
        raise InvalidArgumentError(f"beta must be >= 0, got {beta}.")
    if beta == 0.0:
        return 0.0
    G = kronecker_gram(Yd)
    Aa = assemble_st(Yd, Yd, STOperator.AA, beta)

    def apply(x):
        return G.solve(Aa.T @ G.solve(Aa @ x))

    def inner(x, y):
        return float(x @ G.matvec(y))

    eig = power_iteration(apply, inner, Yd.dim)
    logger.debug("aa_norm_estimate: beta=%g, %d iterations", beta, int(eig.diagnostics["iterations"]))
    return float(math.sqrt(max(eig.value, 0.0)))


# ==================== UNSTABILIZED SCHEME ====================


def _check_zigzag_space(Xd0: SpaceTimeSpace) -> float:
    t = Xd0.temporal
    if t.family != Family.P1 or t.constraint != Constraint.ZERO_LEFT:
        raise InvalidArgumentError("The unstabilized scheme needs a zero-left continuous temporal factor.")
    if not t.partition.is_uniform():
        raise InvalidArgumentError("The zigzag construction needs a uniform temporal partition.")
    if t.partition.n_elements % 2:
        raise InvalidArgumentError(f"Element count must be even, got {t.partition.n_elements}.")
    return float(t.partition.h[0])


def zigzag(Xd0: SpaceTimeSpace) -> np.ndarray:
    """z = z_t (x) z_x with z_t' = +-1 alternating per cell and z_x the interpolant of sin(pi x)."""
    h = _check_zigzag_space(Xd0)
    n = Xd0.temporal.partition.n_elements
    zt = np.where(np.arange(1, n + 1) % 2 == 1, h, 0.0)
    zx = np.sin(np.pi * Xd0.spatial.dof_points())
    return np.kron(zt, zx)


def steinbach_degradation(Xd0: SpaceTimeSpace, compute_gamma: bool = True) -> DegradationResult:
    """Inf-sup constant of the unstabilized scheme and its value at the zigzag candidate."""
    h = _check_zigzag_space(Xd0)
    t = Xd0.temporal
    n = t.partition.n_elements

    G = (pairing_matrix(t, FESpace1D(t.partition, Family.P0), PairingKind.VALUE_VALUE) / h).toarray()
    x = math.sqrt(h) * (-1.0) ** np.arange(n)
    g_norm = float(np.linalg.norm(G @ x))

    z = zigzag(Xd0)
    zigzag_value = mesh_dependent_norm(z, Xd0, Xd0) / discrete_xnorm(Xd0, z)

    gamma_full = None
    if compute_gamma:
        As = assemble_st(Xd0, Xd0, STOperator.AS)
        Dt = assemble_st(Xd0, Xd0, STOperator.DT)
        K = As.toarray() + np.asarray(Dt.T @ kronecker_gram(Xd0).solve(Dt.toarray()))
        K += assemble_st(Xd0, Xd0, STOperator.GAMMAT).toarray()
        eig = smallest_generalized_eig(K, xnorm_gram(Xd0), "unstabilized inf-sup")
        gamma_full = _gamma(eig.value, "unstabilized inf-sup")

    logger.debug("steinbach_degradation: 2N=%d, zigzag=%.6g, gamma=%s", n, zigzag_value, gamma_full)
    return DegradationResult(
        n_elements=n,
        h=h,
        gamma_full=gamma_full,
        zigzag_value=zigzag_value,
        g_norm=g_norm,
        g_norm_expected=0.5 * math.sqrt(h),
    )


def worst_case_solution(Xd0: SpaceTimeSpace, fine_factor: Optional[int] = None) -> Tuple[ProblemDef, np.ndarray]:
    """Exact solution r whose unstabilized Galerkin approximation on Xd0 is the zigzag z.

    r is the minimal X-norm element of a temporally refined zero-left space
    with (B r)(v) = (B z)(v) for all v in Xd0; beta = 0 and u0 = 0.
    """
    z = zigzag(Xd0)
    factor = fine_factor or get_settings().WORST_CASE_FINE_FACTOR
    t = Xd0.temporal
    Z = Xd0.with_temporal(FESpace1D(t.partition.refine(factor), Family.P1, Constraint.ZERO_LEFT))

    K = assemble_st(Z, Xd0, STOperator.B).toarray()
    target = assemble_st(Xd0, Xd0, STOperator.B) @ z
    try:
        G = la.cho_factor(xnorm_gram(Z).toarray())
        GinvKt = la.cho_solve(G, K.T)
        r = GinvKt @ la.solve(K @ GinvKt, target, assume_a="pos")
    except la.LinAlgError as exc:
        raise SolverFailureError(f"Worst-case construction failed: {exc}", {"dim": Z.dim}) from exc

    problem = ProblemDef(exact=discrete_solution(Z, r), beta=0.0, T=Xd0.T)
    return problem, z
