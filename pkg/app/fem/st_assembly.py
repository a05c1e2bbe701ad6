"""
Tensor-product spaces X_t (x) X_x and the Kronecker assembly of every
space-time operator from fe1d factor matrices:

    As     = M_t (x) A_x                  symmetric part of the spatial form
    Aa     = beta M_t (x) N_x             skew convection part
    Dt     = D_t (x) M_x                  time derivative
    B      = Dt + M_t (x) (A_x + beta N_x)
    C      = B - As = Dt + beta M_t (x) N_x
    Gamma0 = (e_0 e_0^T) (x) M_x          trace pairing at t = 0
    GammaT = (e_T e_T^T) (x) M_x          trace pairing at t = T

Flattening: dof (k_t, k_x) -> k_t * spatial.dim + k_x.  Load vectors are
the weak form g(v) = (Bu)(v) of a prescribed exact solution u, integrated
with breakline-aware quadrature.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from app.config import get_settings
from app.exceptions import InvalidArgumentError
from app.fem.fe1d import (
    Constraint,
    Family,
    FESpace1D,
    MatrixKind,
    PairingKind,
    assemble_1d,
    basis_matrix,
    interpolate,
    local_eval,
    pairing_matrix,
    uniform_partition,
)
from app.fem.linalg import KroneckerSPD
from app.fem.quadrature import gauss_legendre, merged_points, spacetime_rule

if TYPE_CHECKING:
    from app.fem.problems import ProblemDef

logger = logging.getLogger(__name__)


class STOperator(str, Enum):
    AS = "As"
    AA = "Aa"
    DT = "Dt"
    B = "B"
    C = "C"
    GAMMA0 = "Gamma0"
    GAMMAT = "GammaT"


class Derivative(str, Enum):
    VALUE = "value"
    DT = "dt"
    DX = "dx"


@dataclass(frozen=True, eq=False)
class SpaceTimeSpace:
    temporal: FESpace1D
    spatial: FESpace1D

    def __post_init__(self):
        if self.spatial.family != Family.P1 or self.spatial.constraint != Constraint.ZERO_BOTH:
            raise InvalidArgumentError("The spatial factor must be a zero-both P1 space.")

    @property
    def dim(self) -> int:
        return self.temporal.dim * self.spatial.dim

    @property
    def shape(self) -> tuple:
        return (self.temporal.dim, self.spatial.dim)

    @property
    def T(self) -> float:
        return float(self.temporal.partition.points[-1])

    def index(self, kt, kx):
        return np.asarray(kt) * self.spatial.dim + np.asarray(kx)

    def unravel(self, k):
        return np.divmod(np.asarray(k), self.spatial.dim)

    def with_temporal(self, temporal: FESpace1D) -> "SpaceTimeSpace":
        return SpaceTimeSpace(temporal, self.spatial)


def tensor_space(
    n_t: int,
    n_x: int,
    T: float = 1.0,
    family: Family = Family.P1,
    constraint: Constraint = Constraint.NONE,
    t_refine: int = 1,
) -> SpaceTimeSpace:
    """Uniform tensor space on (0, T) x (0, 1), temporal mesh refined *t_refine* times."""
    temporal = FESpace1D(uniform_partition(n_t * t_refine, T), family, constraint)
    spatial = FESpace1D(uniform_partition(n_x, 1.0), Family.P1, Constraint.ZERO_BOTH)
    return SpaceTimeSpace(temporal, spatial)


# ==================== OPERATORS ====================


def _trace_vector(space: FESpace1D, s: float) -> np.ndarray:
    if space.family != Family.P1:
        raise InvalidArgumentError("Trace pairings need a continuous (P1) temporal factor.")
    idx, vals = local_eval(space, [s])
    e = np.zeros(space.dim)
    mask = idx[0] >= 0
    e[idx[0][mask]] = vals[0][mask]
    return e


def assemble_st(
    trial: SpaceTimeSpace,
    test: SpaceTimeSpace,
    op: STOperator,
    beta: float = 0.0,
) -> sp.csr_matrix:
    """Space-time operator matrix (rows: test dofs, columns: trial dofs)."""
    op = STOperator(op)
    tt, tx = test.temporal, test.spatial
    rt, rx = trial.temporal, trial.spatial

    if op in (STOperator.DT, STOperator.B, STOperator.C) and rt.family != Family.P1:
        raise InvalidArgumentError(f"{op.value} needs a P1 temporal trial factor.")

    def mt():
        return pairing_matrix(tt, rt, PairingKind.VALUE_VALUE)

    def ax():
        return pairing_matrix(tx, rx, PairingKind.DERIVATIVE_DERIVATIVE)

    def mx():
        return pairing_matrix(tx, rx, PairingKind.VALUE_VALUE)

    def nx():
        return pairing_matrix(tx, rx, PairingKind.VALUE_DERIVATIVE)

    def dt():
        return sp.kron(pairing_matrix(tt, rt, PairingKind.VALUE_DERIVATIVE), mx())

    if op == STOperator.AS:
        mat = sp.kron(mt(), ax())
    elif op == STOperator.AA:
        mat = beta * sp.kron(mt(), nx())
    elif op == STOperator.DT:
        mat = dt()
    elif op == STOperator.B:
        mat = dt() + sp.kron(mt(), ax() + beta * nx())
    elif op == STOperator.C:
        mat = dt() + beta * sp.kron(mt(), nx())
    else:
        s = 0.0 if op == STOperator.GAMMA0 else float(tt.partition.points[-1])
        et, er = _trace_vector(tt, s), _trace_vector(rt, s)
        mat = sp.kron(sp.csr_matrix(np.outer(et, er)), mx())

    mat = sp.csr_matrix(mat)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    logger.debug("assemble_st %s: %d x %d, nnz=%d", op.value, mat.shape[0], mat.shape[1], mat.nnz)
    return mat


def kronecker_gram(space: SpaceTimeSpace) -> KroneckerSPD:
    """Factored As Gram M_t (x) A_x of a space (the Y-norm inner product)."""
    return KroneckerSPD(
        pairing_matrix(space.temporal, space.temporal, PairingKind.VALUE_VALUE),
        assemble_1d(space.spatial, MatrixKind.STIFFNESS),
    )


# ==================== EVALUATION ====================


def evaluate_st(
    space: SpaceTimeSpace,
    coeffs: np.ndarray,
    t: Sequence[float],
    x: Sequence[float],
    derivative: Derivative = Derivative.VALUE,
) -> np.ndarray:
    """Point values (or partial derivatives) of a space-time coefficient vector."""
    derivative = Derivative(derivative)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise InvalidArgumentError(f"Expected {space.dim} coefficients, got shape {coeffs.shape}.")
    C = coeffs.reshape(space.shape)
    it, vt = local_eval(space.temporal, t, derivative == Derivative.DT)
    ix, vx = local_eval(space.spatial, x, derivative == Derivative.DX)
    out = np.zeros(it.shape[0])
    for a in range(it.shape[1]):
        ta = np.where(it[:, a] >= 0, it[:, a], 0)
        for b in range(ix.shape[1]):
            xb = np.where(ix[:, b] >= 0, ix[:, b], 0)
            out += vt[:, a] * vx[:, b] * C[ta, xb]
    return out


def interpolate_st(space: SpaceTimeSpace, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Tensor interpolant of func(t, x) at the dof points of both factors."""
    tp = space.temporal.dof_points()
    xp = space.spatial.dof_points()
    TT, XX = np.meshgrid(tp, xp, indexing="ij")
    return np.asarray(func(TT, XX), dtype=float).ravel()


# ==================== LOADS ====================


def pairing_at_points(
    space: SpaceTimeSpace,
    t: np.ndarray,
    x: np.ndarray,
    weights: np.ndarray,
    dx_test: bool = False,
) -> np.ndarray:
    """Vector of sum_p weights[p] * psi_i(t_p, x_p) (or d/dx psi_i)."""
    Bt = basis_matrix(space.temporal, t)
    Bx = basis_matrix(space.spatial, x, derivative=dx_test)
    F = Bt.T @ sp.diags(weights) @ Bx
    return np.asarray(F.todense()).ravel()


def load_mesh(test: SpaceTimeSpace, problem: "ProblemDef", extra_t=None, extra_x=None):
    """Integration mesh: test partitions joined with the solution's break points."""
    exact = problem.exact
    t_pts = merged_points(test.temporal.partition.points, exact.t_breaks, extra_t)
    x_pts = merged_points(test.spatial.partition.points, exact.x_breaks, extra_x)
    return t_pts, x_pts


def assemble_load(test: SpaceTimeSpace, problem: "ProblemDef", order: Optional[int] = None) -> np.ndarray:
    """g(psi_i) = integral of (u_t + beta u_x) psi_i + u_x d/dx psi_i for the exact u."""
    if abs(test.T - problem.T) > 1e-12 * problem.T:
        raise InvalidArgumentError(f"Test space lives on (0, {test.T}), problem on (0, {problem.T}).")
    order = order or get_settings().QUAD_ORDER
    exact = problem.exact
    if exact.is_zero:
        return np.zeros(test.dim)

    t_pts, x_pts = load_mesh(test, problem)
    rule = spacetime_rule(t_pts, x_pts, order, breakline=exact.singular_line)
    ux = exact.dx(rule.t, rule.x)
    f_val = exact.dt(rule.t, rule.x) + problem.beta * ux
    g = pairing_at_points(test, rule.t, rule.x, rule.w * f_val)
    g += pairing_at_points(test, rule.t, rule.x, rule.w * ux, dx_test=True)
    logger.debug("assemble_load: %d quadrature points, dim=%d", rule.size, test.dim)
    return g


def assemble_initial(test: SpaceTimeSpace, u0: Callable[[np.ndarray], np.ndarray], order: Optional[int] = None) -> np.ndarray:
    """<u0, psi_i(0, .)>_{L2(Omega)}."""
    if test.temporal.family != Family.P1:
        raise InvalidArgumentError("assemble_initial needs a P1 temporal test factor.")
    order = max(order or get_settings().QUAD_ORDER, 5)
    e0 = _trace_vector(test.temporal, 0.0)
    if not np.any(e0):
        return np.zeros(test.dim)

    pts = test.spatial.partition.points
    g, gw = gauss_legendre(order)
    h = np.diff(pts)
    xq = (pts[:-1, None] + h[:, None] * g[None, :]).ravel()
    wq = (h[:, None] * gw[None, :]).ravel()
    fx = basis_matrix(test.spatial, xq).T @ (wq * np.asarray(u0(xq), dtype=float))
    return np.kron(e0, fx)


def interpolate_initial(space: SpaceTimeSpace, u0: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolant of u0 in the spatial factor."""
    return interpolate(space.spatial, u0)
