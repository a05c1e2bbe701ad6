"""Y, X and mesh-dependent norms, reference-space error reports and the X-norm best approximation."""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from app.config import get_settings
from app.exceptions import InvalidArgumentError, SolverFailureError
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
from app.fem.linalg import (
    KroneckerSPD,
    kron_banded,
    kron_matvec,
    solve_banded_spd,
    sparse_factor,
)
from app.fem.problems import ProblemDef
from app.fem.quadrature import SpaceTimeRule, interval_rule, merged_points, spacetime_rule
from app.fem.st_assembly import (
    Derivative,
    SpaceTimeSpace,
    STOperator,
    assemble_st,
    evaluate_st,
    kronecker_gram,
    pairing_at_points,
)
from app.schemas import ErrorReport, Method

logger = logging.getLogger(__name__)

Gram = Union[KroneckerSPD, np.ndarray, sp.spmatrix]


# ==================== BASIC NORMS ====================


def y_norm(space: SpaceTimeSpace, coeffs: np.ndarray) -> float:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise InvalidArgumentError(f"Expected {space.dim} coefficients, got shape {coeffs.shape}.")
    As = assemble_st(space, space, STOperator.AS)
    return float(np.sqrt(max(coeffs @ (As @ coeffs), 0.0)))


def dual_norm_discrete(gram: Gram, f: np.ndarray) -> float:
    """sqrt(f^T G^{-1} f) by one SPD solve."""
    f = np.asarray(f, dtype=float)
    if not np.any(f):
        return 0.0
    if isinstance(gram, KroneckerSPD):
        x = gram.solve(f)
    else:
        if gram.shape != (f.size, f.size):
            raise InvalidArgumentError(f"Gram of shape {gram.shape} does not match a vector of length {f.size}.")
        x = sparse_factor(gram, "Gram").solve(f)
    value = float(f @ x)
    if not np.isfinite(value) or value < -1e-12 * float(f @ f):
        raise SolverFailureError("Gram matrix is not positive definite", {"quadratic_form": value})
    return float(np.sqrt(max(value, 0.0)))


def trace_matrix(space: SpaceTimeSpace, at_end: bool = True) -> sp.csr_matrix:
    return assemble_st(space, space, STOperator.GAMMAT if at_end else STOperator.GAMMA0)


def _temporal_dual_factor(temporal: FESpace1D) -> sp.csr_matrix:
    """D_t^T M0^{-1} D_t for the P0 space on the same partition; exact for P1 trial factors."""
    p0 = FESpace1D(temporal.partition, Family.P0)
    D = pairing_matrix(p0, temporal, PairingKind.VALUE_DERIVATIVE)
    return (D.T @ sp.diags(1.0 / temporal.partition.h) @ D).tocsr()


def xnorm_terms(space: SpaceTimeSpace):
    """Kronecker terms (temporal, spatial) of the exact discrete X-norm Gram."""
    if space.temporal.family != Family.P1:
        raise InvalidArgumentError("The X-norm needs a continuous temporal factor.")
    t, x = space.temporal, space.spatial
    return [
        (pairing_matrix(t, t, PairingKind.VALUE_VALUE), assemble_1d(x, MatrixKind.STIFFNESS)),
        (_trace_factor(t), assemble_1d(x, MatrixKind.MASS)),
        (_temporal_dual_factor(t), hminus1_gram(x)),
    ]


def _trace_factor(temporal: FESpace1D) -> sp.csr_matrix:
    e = np.zeros(temporal.dim)
    last = temporal.node_dofs()[-1]
    if last >= 0:
        e[last] = 1.0
    return sp.csr_matrix(np.outer(e, e))


def xnorm_gram(space: SpaceTimeSpace) -> sp.csr_matrix:
    """Gram matrix of ||u||_X^2 = ||u||_Y^2 + ||d/dt u||_{Y'}^2 + ||u(T)||^2 on P1-in-time spaces."""
    return sum(sp.kron(T, sp.csr_matrix(S), format="csr") for T, S in xnorm_terms(space))


def discrete_xnorm(space: SpaceTimeSpace, coeffs: np.ndarray) -> float:
    """Exact X-norm of a P1-in-time function (its time derivative is piecewise constant)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise InvalidArgumentError(f"Expected {space.dim} coefficients, got shape {coeffs.shape}.")
    total = sum(coeffs @ kron_matvec(T, S, coeffs) for T, S in xnorm_terms(space))
    return float(np.sqrt(max(total, 0.0)))


def mesh_dependent_norm(u_coeffs: np.ndarray, Xd: SpaceTimeSpace, Yd: SpaceTimeSpace) -> float:
    """||u||_{X,Y}: the X-norm with the dual norm of d/dt u taken over Yd only."""
    u = np.asarray(u_coeffs, dtype=float)
    if u.shape != (Xd.dim,):
        raise InvalidArgumentError(f"Expected {Xd.dim} coefficients, got shape {u.shape}.")
    y2 = y_norm(Xd, u) ** 2
    dual = dual_norm_discrete(kronecker_gram(Yd), assemble_st(Xd, Yd, STOperator.DT) @ u)
    trace2 = float(u @ (trace_matrix(Xd) @ u))
    return float(np.sqrt(max(y2 + dual**2 + trace2, 0.0)))


# ==================== REFERENCE SPACE ====================


class ReferenceSpace:
    """P0 (x) P1 on the ref_factor-refined meshes of a trial space, with its As Gram factored."""

    def __init__(self, Xd: SpaceTimeSpace, ref_factor: Optional[int] = None):
        ref_factor = get_settings().REF_FACTOR if ref_factor is None else int(ref_factor)
        if ref_factor < 2:
            raise InvalidArgumentError(f"ref_factor must be >= 2, got {ref_factor}.")
        self.Xd = Xd
        self.ref_factor = ref_factor
        self.space = SpaceTimeSpace(
            FESpace1D(Xd.temporal.partition.refine(ref_factor), Family.P0),
            FESpace1D(Xd.spatial.partition.refine(ref_factor), Family.P1, Constraint.ZERO_BOTH),
        )
        self.gram = kronecker_gram(self.space)
        logger.debug("ReferenceSpace: factor %d, dim %d", ref_factor, self.space.dim)

    @cached_property
    def dt_pairing(self) -> sp.csr_matrix:
        return assemble_st(self.Xd, self.space, STOperator.DT)

    def dual_terms(self) -> Tuple[sp.csr_matrix, np.ndarray]:
        """Kronecker factors of Dt^T G^{-1} Dt from Xd into the reference space."""
        t_ref, x_ref = self.space.temporal, self.space.spatial
        Dt = pairing_matrix(t_ref, self.Xd.temporal, PairingKind.VALUE_DERIVATIVE)
        St = (Dt.T @ sp.diags(1.0 / t_ref.partition.h) @ Dt).tocsr()
        Mc = pairing_matrix(x_ref, self.Xd.spatial, PairingKind.VALUE_VALUE)
        ax_lu = sparse_factor(assemble_1d(x_ref, MatrixKind.STIFFNESS), "reference stiffness")
        Wr = np.asarray(Mc.T @ ax_lu.solve(Mc.toarray()))
        return St, 0.5 * (Wr + Wr.T)

    def rule(self, problem: ProblemDef, *extra: SpaceTimeSpace, order: Optional[int] = None) -> SpaceTimeRule:
        """Breakline-aware rule on the reference mesh joined with the solution's break points."""
        exact = problem.exact
        spaces = (self.space, self.Xd) + extra
        t_pts = merged_points(*(s.temporal.partition.points for s in spaces), exact.t_breaks)
        x_pts = merged_points(*(s.spatial.partition.points for s in spaces), exact.x_breaks)
        return spacetime_rule(t_pts, x_pts, order or get_settings().QUAD_ORDER, breakline=exact.singular_line)


def _trace_rule(space: SpaceTimeSpace, problem: ProblemDef, s: float, order: int):
    exact = problem.exact
    kinks = [s] if exact.singular_line and 0.0 < s < 1.0 else None
    pts = merged_points(space.spatial.partition.points, exact.x_breaks, kinks)
    return interval_rule(pts, order)


@dataclass
class _XNormParts:
    err_Y: float
    err_dual: float
    err_T: float

    @property
    def err_X(self) -> float:
        return float(np.sqrt(self.err_Y**2 + self.err_dual**2 + self.err_T**2))


def _xnorm_error(problem: ProblemDef, X: SpaceTimeSpace, u: np.ndarray, ref: ReferenceSpace, rule: SpaceTimeRule) -> _XNormParts:
    exact = problem.exact
    ex = exact.dx(rule.t, rule.x) - evaluate_st(X, u, rule.t, rule.x, Derivative.DX)
    err_Y = np.sqrt(max(rule.integrate(ex**2), 0.0))

    et = exact.dt(rule.t, rule.x) - evaluate_st(X, u, rule.t, rule.x, Derivative.DT)
    err_dual = ref.gram.dual_norm(pairing_at_points(ref.space, rule.t, rule.x, rule.w * et))

    err_T = _trace_error(problem, X, u, X.T)
    return _XNormParts(float(err_Y), float(err_dual), err_T)


def _trace_error(problem: ProblemDef, X: SpaceTimeSpace, u: np.ndarray, s: float) -> float:
    x, w = _trace_rule(X, problem, s, get_settings().QUAD_ORDER)
    t = np.full_like(x, s)
    e = problem.exact.value(t, x) - evaluate_st(X, u, t, x)
    return float(np.sqrt(max(w @ e**2, 0.0)))


def error_report(
    problem: ProblemDef,
    sol,
    Xd: Optional[SpaceTimeSpace] = None,
    Yd: Optional[SpaceTimeSpace] = None,
    ref_factor: Optional[int] = None,
    reference: Optional[ReferenceSpace] = None,
) -> ErrorReport:
    """Error norms of a solution; u is measured on ``sol.space`` (the lifted space for steinbach)."""
    X = sol.space
    if Xd is not None and not (
        Xd.temporal.partition.same_as(X.temporal.partition) and Xd.spatial.partition.same_as(X.spatial.partition)
    ):
        raise InvalidArgumentError("Solution does not live on the given trial meshes.")
    ref = reference or ReferenceSpace(X, ref_factor)
    rule = ref.rule(problem)
    parts = _xnorm_error(problem, X, sol.u_coeffs, ref, rule)
    err_0 = _trace_error(problem, X, sol.u_coeffs, 0.0)

    err_aux = None
    Yd = Yd or sol.aux_space
    if sol.method == Method.NEW_MIXED and sol.aux_coeffs is not None:
        aux_rule = ref.rule(problem, Yd)
        diff = problem.exact.dx(aux_rule.t, aux_rule.x) - evaluate_st(
            Yd, sol.aux_coeffs, aux_rule.t, aux_rule.x, Derivative.DX
        )
        err_aux = float(np.sqrt(max(aux_rule.integrate(diff**2), 0.0)))
    elif sol.method == Method.ANDREEV and sol.aux_coeffs is not None:
        # The exact multiplier vanishes
        err_aux = y_norm(Yd, sol.aux_coeffs)

    report = ErrorReport(
        dim_X=X.dim,
        err_X=parts.err_X,
        err_Y=parts.err_Y,
        err_T=parts.err_T,
        err_0=err_0,
        err_dual=parts.err_dual,
        err_aux_Y=err_aux,
        ref_refinement=ref.ref_factor,
    )
    logger.debug("error_report %s: dim_X=%d, err_X=%.6e", sol.method.value, X.dim, report.err_X)
    return report


def best_approx_xnorm(
    problem: ProblemDef,
    Xd: SpaceTimeSpace,
    ref_factor: Optional[int] = None,
    reference: Optional[ReferenceSpace] = None,
) -> Tuple[np.ndarray, float]:
    """Minimizer over Xd of the reference-space X-norm error, and that error.

    The Gram As + GammaT + Dt^T G_ref^{-1} Dt is block tridiagonal in time
    and is solved in banded form.
    """
    ref = reference or ReferenceSpace(Xd, ref_factor)
    rule = ref.rule(problem)
    exact = problem.exact
    t, x = Xd.temporal, Xd.spatial

    St, Wr = ref.dual_terms()
    terms = [
        (pairing_matrix(t, t, PairingKind.VALUE_VALUE), assemble_1d(x, MatrixKind.STIFFNESS)),
        (_trace_factor(t), assemble_1d(x, MatrixKind.MASS)),
        (St, Wr),
    ]

    rhs = pairing_at_points(Xd, rule.t, rule.x, rule.w * exact.dx(rule.t, rule.x), dx_test=True)
    f_dt = pairing_at_points(ref.space, rule.t, rule.x, rule.w * exact.dt(rule.t, rule.x))
    rhs += ref.dt_pairing.T @ ref.gram.solve(f_dt)
    xs, ws = _trace_rule(Xd, problem, Xd.T, get_settings().QUAD_ORDER)
    ts = np.full_like(xs, Xd.T)
    rhs += pairing_at_points(Xd, ts, xs, ws * exact.value(ts, xs))

    coeffs = solve_banded_spd(kron_banded(terms), rhs, "X-norm Gram")
    error = _xnorm_error(problem, Xd, coeffs, ref, rule).err_X
    logger.debug("best_approx_xnorm: dim_X=%d, error=%.6e", Xd.dim, error)
    return coeffs, error
