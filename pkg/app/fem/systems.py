"""
Discrete systems
----------------
Builders for the three discretizations and their solvers.

``new_mixed``  (lambda, u) in Y x X:
    [ As^YY        C^XY        ] [lambda]   [ g|Y                  ]
    [ (C^XY)^T   -(As^XX + GT) ] [  u   ] = [ -(g|X + <u0, .(0)>)  ]

``andreev``  (mu, u) in Y x X with X a subspace of Y:
    [ As^YY      B^XY   ] [mu]   [ g|Y          ]
    [ (B^XY)^T   -G0    ] [u ] = [ -<u0, .(0)>  ]

``steinbach``  u = lift + w with w vanishing at t = 0:
    B^{X0 X0} w = g|X0 - B^{X X0} lift

Unknowns of a saddle system are ordered auxiliary block first, then u.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from app.config import get_settings
from app.exceptions import InternalError, InvalidArgumentError, SolverFailureError
from app.fem.fe1d import Constraint, Family, FESpace1D, prolongation
from app.fem.linalg import KroneckerSPD, condition_estimate, sparse_factor
from app.fem.problems import ProblemDef
from app.fem.st_assembly import (
    SpaceTimeSpace,
    STOperator,
    assemble_initial,
    assemble_load,
    assemble_st,
    interpolate_initial,
    kronecker_gram,
    tensor_space,
)
from app.schemas import Method, SolverDiagnostics, SolverKind

logger = logging.getLogger(__name__)

# Absolute tolerance for u0 vanishing on the spatial boundary
_BOUNDARY_TOL = 1e-12


# ==================== SYSTEM TYPES ====================


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    blocks: Tuple[Tuple[sp.csr_matrix, sp.csr_matrix], Tuple[sp.csr_matrix, sp.csr_matrix]]
    rhs: Tuple[np.ndarray, np.ndarray]
    labels: Tuple[str, str]
    symmetric: bool
    method: Method
    trial: SpaceTimeSpace
    test: SpaceTimeSpace
    a11_factors: Optional[KroneckerSPD] = None

    def __post_init__(self):
        (a11, a12), (a21, a22) = self.blocks
        n1, n2 = a11.shape[0], a22.shape[0]
        shapes = {"(0,0)": (a11.shape, (n1, n1)), "(0,1)": (a12.shape, (n1, n2)),
                  "(1,0)": (a21.shape, (n2, n1)), "(1,1)": (a22.shape, (n2, n2))}
        for name, (got, want) in shapes.items():
            if got != want:
                raise InvalidArgumentError(f"Block {name} has shape {got}, expected {want}.")
        if self.rhs[0].shape != (n1,) or self.rhs[1].shape != (n2,):
            raise InvalidArgumentError("Right-hand side blocks do not match the block sizes.")
        if self.symmetric:
            for name, diff, ref in (
                ("(0,1)", a12 - a21.T, a12),
                ("(0,0)", a11 - a11.T, a11),
                ("(1,1)", a22 - a22.T, a22),
            ):
                scale = max(abs(ref).max() if ref.nnz else 0.0, 1.0)
                if diff.nnz and abs(diff).max() > 1e-12 * scale:
                    raise InvalidArgumentError(f"System flagged symmetric but block {name} is not.")

    @property
    def sizes(self) -> Tuple[int, int]:
        return self.blocks[0][0].shape[0], self.blocks[1][1].shape[0]

    @property
    def nnz(self) -> int:
        return sum(b.nnz for row in self.blocks for b in row)

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat(self.blocks, format="csc")

    def vector(self) -> np.ndarray:
        return np.concatenate(self.rhs)

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n1, _ = self.sizes
        return x[:n1], x[n1:]


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    """Square system on the constrained space X0; u = lift + extension @ w."""

    matrix_: sp.csr_matrix
    rhs: np.ndarray
    space: SpaceTimeSpace
    full_space: SpaceTimeSpace
    extension: sp.csr_matrix
    lift: np.ndarray
    method: Method = Method.STEINBACH

    def matrix(self) -> sp.csc_matrix:
        return sp.csc_matrix(self.matrix_)

    def vector(self) -> np.ndarray:
        return self.rhs

    def expand(self, w: np.ndarray) -> np.ndarray:
        return self.lift + self.extension @ w


@dataclass(frozen=True, eq=False)
class Solution:
    u_coeffs: np.ndarray
    space: SpaceTimeSpace
    method: Method
    diagnostics: SolverDiagnostics
    aux_coeffs: Optional[np.ndarray] = None
    aux_space: Optional[SpaceTimeSpace] = None


System = Union[SaddleSystem, GalerkinSystem]


# ==================== BUILDERS ====================


def _check_pair(Xd: SpaceTimeSpace, Yd: SpaceTimeSpace):
    if not Xd.spatial.partition.same_as(Yd.spatial.partition):
        raise InvalidArgumentError("Trial and test spaces must share the spatial factor.")
    if abs(Xd.T - Yd.T) > 1e-12 * Xd.T:
        raise InvalidArgumentError(f"Trial space lives on (0, {Xd.T}), test space on (0, {Yd.T}).")


def _check_problem(space: SpaceTimeSpace, problem: ProblemDef):
    if abs(space.T - problem.T) > 1e-12 * problem.T:
        raise InvalidArgumentError(f"Space lives on (0, {space.T}), problem on (0, {problem.T}).")


def build_new_mixed(Xd: SpaceTimeSpace, Yd: SpaceTimeSpace, problem: ProblemDef) -> SaddleSystem:
    """Symmetric saddle system of the new mixed method, unknowns (lambda, u)."""
    if Xd.temporal.family != Family.P1 or Xd.temporal.left_constrained:
        raise InvalidArgumentError("new_mixed needs a continuous temporal trial factor free at t = 0.")
    _check_pair(Xd, Yd)
    _check_problem(Xd, problem)
    beta = problem.beta

    a11 = assemble_st(Yd, Yd, STOperator.AS)
    a12 = assemble_st(Xd, Yd, STOperator.C, beta)
    a22 = -(assemble_st(Xd, Xd, STOperator.AS) + assemble_st(Xd, Xd, STOperator.GAMMAT))
    f1 = assemble_load(Yd, problem)
    f2 = -(assemble_load(Xd, problem) + assemble_initial(Xd, problem.u0))

    system = SaddleSystem(
        blocks=((a11, a12), (a12.T.tocsr(), sp.csr_matrix(a22))),
        rhs=(f1, f2),
        labels=("lambda", "u"),
        symmetric=True,
        method=Method.NEW_MIXED,
        trial=Xd,
        test=Yd,
        a11_factors=kronecker_gram(Yd),
    )
    logger.debug("build_new_mixed: dim Y=%d, dim X=%d, nnz=%d", Yd.dim, Xd.dim, system.nnz)
    return system


def build_andreev(Xd: SpaceTimeSpace, Yd: SpaceTimeSpace, problem: ProblemDef) -> SaddleSystem:
    """Symmetric saddle system of the reduced Andreev method, unknowns (mu, u)."""
    if Xd.temporal.family != Family.P1 or Yd.temporal.family != Family.P1:
        raise InvalidArgumentError("andreev needs continuous temporal factors in both spaces.")
    _check_pair(Xd, Yd)
    _check_problem(Xd, problem)
    if not Yd.temporal.partition.is_refinement_of(Xd.temporal.partition):
        raise InvalidArgumentError("andreev needs the test temporal mesh to refine the trial mesh.")
    # Raises when a constrained Y cannot contain X
    prolongation(Xd.temporal, Yd.temporal)
    beta = problem.beta

    a11 = assemble_st(Yd, Yd, STOperator.AS)
    a12 = assemble_st(Xd, Yd, STOperator.B, beta)
    a22 = -assemble_st(Xd, Xd, STOperator.GAMMA0)
    f1 = assemble_load(Yd, problem)
    f2 = -assemble_initial(Xd, problem.u0)

    system = SaddleSystem(
        blocks=((a11, a12), (a12.T.tocsr(), sp.csr_matrix(a22))),
        rhs=(f1, f2),
        labels=("mu", "u"),
        symmetric=True,
        method=Method.ANDREEV,
        trial=Xd,
        test=Yd,
        a11_factors=kronecker_gram(Yd),
    )
    logger.debug("build_andreev: dim Y=%d, dim X=%d, nnz=%d", Yd.dim, Xd.dim, system.nnz)
    return system


def unconstrained(space: SpaceTimeSpace) -> SpaceTimeSpace:
    """Same space without the temporal constraint at t = 0."""
    t = space.temporal
    return space.with_temporal(FESpace1D(t.partition, t.family, Constraint.NONE))


def steinbach_lift(space: SpaceTimeSpace, u0_coeffs: np.ndarray) -> np.ndarray:
    """Constant extension in time of spatial coefficients over *space*."""
    if space.temporal.family != Family.P1 or space.temporal.constraint != Constraint.NONE:
        raise InvalidArgumentError("The lift lives in an unconstrained continuous temporal space.")
    u0_coeffs = np.asarray(u0_coeffs, dtype=float)
    if u0_coeffs.shape != (space.spatial.dim,):
        raise InvalidArgumentError(f"Expected {space.spatial.dim} spatial coefficients, got {u0_coeffs.shape}.")
    return np.kron(np.ones(space.temporal.dim), u0_coeffs)


def build_steinbach(Xd0: SpaceTimeSpace, problem: ProblemDef, lift: Optional[np.ndarray] = None) -> GalerkinSystem:
    """Nonsymmetric Galerkin system of the unstabilized scheme on X0.

    Without an explicit *lift*, u0 is interpolated in the spatial factor and
    extended constantly in time; u0 must then vanish on the boundary.
    """
    t = Xd0.temporal
    if t.family != Family.P1 or t.constraint != Constraint.ZERO_LEFT:
        raise InvalidArgumentError("steinbach needs a continuous temporal factor vanishing at t = 0.")
    _check_problem(Xd0, problem)
    full = unconstrained(Xd0)

    if lift is None:
        ends = np.asarray(problem.u0(np.array([0.0, 1.0])), dtype=float)
        if np.any(np.abs(ends) > _BOUNDARY_TOL):
            raise InvalidArgumentError(
                "u0 does not vanish on the boundary; provide a lift for the steinbach method."
            )
        lift = steinbach_lift(full, interpolate_initial(full, problem.u0))
    else:
        lift = np.asarray(lift, dtype=float)
        if lift.shape != (full.dim,):
            raise InvalidArgumentError(f"Lift must have {full.dim} coefficients, got {lift.shape}.")

    matrix = assemble_st(Xd0, Xd0, STOperator.B, problem.beta)
    rhs = assemble_load(Xd0, problem)
    if np.any(lift):
        rhs = rhs - assemble_st(full, Xd0, STOperator.B, problem.beta) @ lift
    extension = sp.kron(prolongation(t, full.temporal), sp.identity(Xd0.spatial.dim), format="csr")
    logger.debug("build_steinbach: dim X0=%d, nnz=%d", Xd0.dim, matrix.nnz)
    return GalerkinSystem(
        matrix_=matrix, rhs=rhs, space=Xd0, full_space=full, extension=extension, lift=lift
    )


def discrete_spaces(method: Method, n_t: int, n_x: Optional[int] = None, T: float = 1.0) -> Tuple[SpaceTimeSpace, SpaceTimeSpace]:
    """Trial and test spaces of a method on uniform meshes (n_x defaults to n_t)."""
    method = Method(method)
    n_x = n_t if n_x is None else n_x
    if method == Method.NEW_MIXED:
        return tensor_space(n_t, n_x, T), tensor_space(n_t, n_x, T, family=Family.P0)
    if method == Method.ANDREEV:
        return tensor_space(n_t, n_x, T), tensor_space(n_t, n_x, T, t_refine=2)
    X0 = tensor_space(n_t, n_x, T, constraint=Constraint.ZERO_LEFT)
    return X0, X0


def build_system(method: Method, Xd: SpaceTimeSpace, Yd: SpaceTimeSpace, problem: ProblemDef) -> System:
    method = Method(method)
    if method == Method.NEW_MIXED:
        return build_new_mixed(Xd, Yd, problem)
    if method == Method.ANDREEV:
        return build_andreev(Xd, Yd, problem)
    return build_steinbach(Xd, problem)


# ==================== SOLVERS ====================


def _relative_residual(K: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(b - K @ x) / nb) if nb > 0.0 else 0.0


def _solution(system: System, x: np.ndarray, diagnostics: SolverDiagnostics) -> Solution:
    if isinstance(system, GalerkinSystem):
        return Solution(
            u_coeffs=system.expand(x), space=system.full_space, method=system.method, diagnostics=diagnostics
        )
    aux, u = system.split(x)
    return Solution(
        u_coeffs=u,
        space=system.trial,
        method=system.method,
        diagnostics=diagnostics,
        aux_coeffs=aux,
        aux_space=system.test,
    )


def solve_direct(system: System) -> Solution:
    """Sparse LU solve with one step of iterative refinement when needed."""
    rtol = get_settings().SOLVER_RTOL
    K = system.matrix()
    b = system.vector()
    if not np.any(b):
        return _solution(system, np.zeros(K.shape[0]), SolverDiagnostics(solver=SolverKind.DIRECT.value, residual=0.0))

    try:
        lu = sparse_factor(K, f"{system.method.value} system")
    except SolverFailureError as exc:
        exc.diagnostics.update({"condition": float("inf")})
        raise

    x = lu.solve(b)
    residual = _relative_residual(K, x, b) if np.all(np.isfinite(x)) else float("inf")
    steps = 0
    if residual > rtol and np.isfinite(residual):
        x = x + lu.solve(b - K @ x)
        residual = _relative_residual(K, x, b)
        steps = 1

    if not residual <= rtol:
        raise SolverFailureError(
            f"{system.method.value} system is numerically singular",
            {"residual": residual, "condition": condition_estimate(K, lu), "dim": K.shape[0]},
        )

    logger.debug("solve_direct %s: dim=%d, residual=%.2e", system.method.value, K.shape[0], residual)
    return _solution(
        system,
        x,
        SolverDiagnostics(
            solver=SolverKind.DIRECT.value, residual=residual, factorizations=1, refinement_steps=steps
        ),
    )


class SchurComplement:
    """S = A12^T A11^{-1} A12 - A22 applied matrix-free, A11 through its Kronecker factors."""

    def __init__(self, system: SaddleSystem):
        if system.a11_factors is None:
            raise InvalidArgumentError("Schur complement needs a factored (0,0) block.")
        (_, self.a12), (_, self.a22) = system.blocks
        self.a11 = system.a11_factors
        self.f1, self.f2 = system.rhs
        self.dim = self.a22.shape[0]

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.a12.T @ self.a11.solve(self.a12 @ u) - self.a22 @ u

    def rhs(self) -> np.ndarray:
        return self.a12.T @ self.a11.solve(self.f1) - self.f2

    def back_substitute(self, u: np.ndarray) -> np.ndarray:
        return self.a11.solve(self.f1 - self.a12 @ u)


def _min_ritz(alphas, betas) -> float:
    """Smallest eigenvalue of the Lanczos matrix built from CG coefficients."""
    a = np.asarray(alphas)
    b = np.asarray(betas)
    d = 1.0 / a
    d[1:] += b[: a.size - 1] / a[:-1]
    e = np.sqrt(b[: a.size - 1]) / a[:-1]
    return float(la.eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0))[0])


def solve_schur_cg(system: SaddleSystem) -> Solution:
    """Conjugate gradients on the SPD Schur complement, then back-substitution for the aux block."""
    if not isinstance(system, SaddleSystem):
        raise InvalidArgumentError("schur_cg applies to saddle systems only.")
    settings = get_settings()
    S = SchurComplement(system)
    rhs = S.rhs()
    b_norm = np.linalg.norm(rhs)
    if b_norm == 0.0 and not np.any(system.rhs[0]):
        return _solution(
            system, np.zeros(sum(system.sizes)), SolverDiagnostics(solver=SolverKind.SCHUR_CG.value, residual=0.0)
        )

    maxiter = math.ceil(settings.CG_MAXITER_FACTOR * math.sqrt(S.dim))
    u = np.zeros(S.dim)
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    alphas, betas = [], []
    k = 0
    while np.sqrt(rr) > settings.CG_RTOL * b_norm:
        if k >= maxiter:
            raise SolverFailureError(
                "Schur CG did not converge",
                {"iterations": k, "residual": float(np.sqrt(rr) / b_norm)},
            )
        Sp = S.apply(p)
        curvature = float(p @ Sp)
        if curvature <= 0.0:
            raise InternalError(f"Schur complement is not positive definite (p^T S p = {curvature:.3e}).")
        alpha = rr / curvature
        u += alpha * p
        r -= alpha * Sp
        rr_new = float(r @ r)
        beta = rr_new / rr
        p = r + beta * p
        rr = rr_new
        alphas.append(alpha)
        betas.append(beta)
        k += 1

    min_ritz = _min_ritz(alphas, betas) if alphas else None
    if min_ritz is not None and min_ritz <= 0.0:
        raise InternalError(f"Smallest Ritz value of the Schur complement is {min_ritz:.3e}.")

    aux = S.back_substitute(u)
    x = np.concatenate([aux, u])
    residual = _relative_residual(system.matrix(), x, system.vector())
    logger.debug("solve_schur_cg %s: %d iterations, residual=%.2e", system.method.value, k, residual)
    return _solution(
        system,
        x,
        SolverDiagnostics(
            solver=SolverKind.SCHUR_CG.value,
            residual=residual,
            iterations=k,
            factorizations=1 if S.a11.diagonal else 2,
            min_ritz=min_ritz,
        ),
    )


def solve(system: System, solver: SolverKind = SolverKind.DIRECT) -> Solution:
    if SolverKind(solver) == SolverKind.SCHUR_CG:
        return solve_schur_cg(system)
    return solve_direct(system)
