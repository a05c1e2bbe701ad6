"""
One-dimensional P1/P0 spaces, exact element matrices and the H^{-1} Gram.

Matrices are csr with rows indexed by the test space and columns by the
trial space; constrained P1 end nodes carry no degree of freedom.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from app.exceptions import InvalidArgumentError
from app.fem.quadrature import gauss_legendre


OperatorMatrix = sp.csr_matrix

# Relative tolerance for "same point" comparisons between partitions
_POINT_TOL = 1e-12


class Family(str, Enum):
    P1 = "P1"
    P0 = "P0"


class Constraint(str, Enum):
    NONE = "none"
    ZERO_LEFT = "zero-left"
    ZERO_RIGHT = "zero-right"
    ZERO_BOTH = "zero-both"


class PairingKind(str, Enum):
    VALUE_VALUE = "value-value"
    VALUE_DERIVATIVE = "value-of-derivative"
    DERIVATIVE_DERIVATIVE = "derivative-derivative"


class MatrixKind(str, Enum):
    MASS = "mass"
    STIFFNESS = "stiffness"
    CONVECTION = "convection"


# ==================== PARTITIONS ====================


@dataclass(frozen=True, eq=False)
class Partition1D:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise InvalidArgumentError("A partition needs at least 2 points.")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("Partition points must be finite.")
        if np.any(np.diff(pts) <= 0.0):
            raise InvalidArgumentError("Partition points must be strictly increasing.")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_elements(self) -> int:
        return self.points.size - 1

    @property
    def length(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.points)

    def is_uniform(self) -> bool:
        h = self.h
        return bool(np.allclose(h, h[0], rtol=1e-10, atol=0.0))

    def refine(self, factor: int) -> "Partition1D":
        """Split every element into *factor* equal parts."""
        if factor < 1:
            raise InvalidArgumentError(f"Refinement factor must be >= 1, got {factor}.")
        s = np.arange(factor) / factor
        inner = (self.points[:-1, None] + self.h[:, None] * s[None, :]).ravel()
        return Partition1D(np.append(inner, self.points[-1]))

    def same_as(self, other: "Partition1D") -> bool:
        return self.points.size == other.points.size and bool(
            np.allclose(self.points, other.points, rtol=0.0, atol=_POINT_TOL * self.length)
        )

    def is_refinement_of(self, coarse: "Partition1D") -> bool:
        """True when every breakpoint of *coarse* is a breakpoint of self."""
        tol = _POINT_TOL * self.length
        if abs(self.points[0] - coarse.points[0]) > tol or abs(self.points[-1] - coarse.points[-1]) > tol:
            return False
        idx = np.clip(np.searchsorted(self.points, coarse.points), 1, self.points.size - 1)
        nearest = np.minimum(
            np.abs(self.points[idx] - coarse.points),
            np.abs(self.points[idx - 1] - coarse.points),
        )
        return bool(np.all(nearest <= tol))


def uniform_partition(n: int, L: float = 1.0) -> Partition1D:
    """``n`` equal elements on [0, L]."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"Element count must be a positive integer, got {n}.")
    if not L > 0.0:
        raise InvalidArgumentError(f"Interval length must be > 0, got {L}.")
    return Partition1D(np.linspace(0.0, L, int(n) + 1))


# ==================== SPACES ====================


@dataclass(frozen=True, eq=False)
class FESpace1D:
    partition: Partition1D
    family: Family = Family.P1
    constraint: Constraint = Constraint.NONE

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "constraint", Constraint(self.constraint))
        if self.family == Family.P0 and self.constraint != Constraint.NONE:
            raise InvalidArgumentError("P0 spaces carry no boundary constraint.")
        if self.dim < 1:
            raise InvalidArgumentError(
                f"{self.family.value} space with constraint {self.constraint.value} "
                f"on {self.partition.n_elements} element(s) is empty."
            )

    @property
    def dim(self) -> int:
        if self.family == Family.P0:
            return self.partition.n_elements
        return self.partition.points.size - self._n_constrained

    @property
    def _n_constrained(self) -> int:
        return {
            Constraint.NONE: 0,
            Constraint.ZERO_LEFT: 1,
            Constraint.ZERO_RIGHT: 1,
            Constraint.ZERO_BOTH: 2,
        }[self.constraint]

    @property
    def left_constrained(self) -> bool:
        return self.constraint in (Constraint.ZERO_LEFT, Constraint.ZERO_BOTH)

    @property
    def right_constrained(self) -> bool:
        return self.constraint in (Constraint.ZERO_RIGHT, Constraint.ZERO_BOTH)

    def node_dofs(self) -> np.ndarray:
        """Dof index of every P1 node, -1 for constrained nodes."""
        n_nodes = self.partition.points.size
        dofs = np.arange(n_nodes) - (1 if self.left_constrained else 0)
        if self.left_constrained:
            dofs[0] = -1
        if self.right_constrained:
            dofs[-1] = -1
        return dofs

    def dof_points(self) -> np.ndarray:
        """Nodes (P1) or element midpoints (P0) carrying the dofs."""
        pts = self.partition.points
        if self.family == Family.P0:
            return 0.5 * (pts[:-1] + pts[1:])
        return pts[self.node_dofs() >= 0]

    def on_partition(self, partition: Partition1D) -> "FESpace1D":
        return FESpace1D(partition, self.family, self.constraint)


def _locate(partition: Partition1D, pts: np.ndarray) -> np.ndarray:
    """Element index of every point; breakpoints belong to the left element."""
    tol = _POINT_TOL * partition.length
    if np.any(pts < partition.points[0] - tol) or np.any(pts > partition.points[-1] + tol):
        raise InvalidArgumentError(
            f"Evaluation points outside [{partition.points[0]}, {partition.points[-1]}]."
        )
    elem = np.searchsorted(partition.points, pts, side="left") - 1
    return np.clip(elem, 0, partition.n_elements - 1)


def local_eval(
    space: FESpace1D, pts: Sequence[float], derivative: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """Local basis indices and values at *pts*.

    Returns ``(idx, vals)`` of shape (P, k) with k = 2 for P1 and k = 1 for
    P0; constrained basis functions appear with index -1 and value 0.
    """
    pts = np.asarray(pts, dtype=float).ravel()
    part = space.partition
    elem = _locate(part, pts)
    if space.family == Family.P0:
        idx = elem[:, None]
        vals = np.zeros((pts.size, 1)) if derivative else np.ones((pts.size, 1))
        return idx, vals

    h = part.h[elem]
    dofs = space.node_dofs()
    idx = np.column_stack([dofs[elem], dofs[elem + 1]])
    if derivative:
        vals = np.column_stack([-1.0 / h, 1.0 / h])
    else:
        lam = (pts - part.points[elem]) / h
        vals = np.column_stack([1.0 - lam, lam])
    vals = np.where(idx >= 0, vals, 0.0)
    return idx, vals


def basis_matrix(space: FESpace1D, pts: Sequence[float], derivative: bool = False) -> sp.csr_matrix:
    """Sparse point-evaluation matrix: row p holds the basis values at pts[p]."""
    idx, vals = local_eval(space, pts, derivative)
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    mask = idx.ravel() >= 0
    return sp.csr_matrix(
        (vals.ravel()[mask], (rows[mask], idx.ravel()[mask])),
        shape=(idx.shape[0], space.dim),
    )


def evaluate(space: FESpace1D, coeffs: Sequence[float], pts: Sequence[float], derivative: bool = False) -> np.ndarray:
    """Values of the expanded function at *pts* (left-element convention at P0 jumps)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise InvalidArgumentError(f"Expected {space.dim} coefficients, got shape {coeffs.shape}.")
    idx, vals = local_eval(space, pts, derivative)
    safe = np.where(idx >= 0, idx, 0)
    return np.sum(vals * coeffs[safe], axis=1)


def interpolate(space: FESpace1D, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolant (P1) or midpoint values (P0) of *func*."""
    return np.asarray(func(space.dof_points()), dtype=float)


# ==================== ELEMENT MATRICES ====================


def _local_dofs(space: FESpace1D) -> np.ndarray:
    n = space.partition.n_elements
    if space.family == Family.P0:
        return np.arange(n)[:, None]
    dofs = space.node_dofs()
    return np.column_stack([dofs[:-1], dofs[1:]])


def _element_blocks(test: FESpace1D, trial: FESpace1D, kind: PairingKind) -> np.ndarray:
    """Exact local matrices, shape (n_elements, n_test_local, n_trial_local)."""
    h = test.partition.h
    one = np.ones_like(h)
    fam = (test.family, trial.family)

    if kind == PairingKind.VALUE_VALUE:
        if fam == (Family.P1, Family.P1):
            return h[:, None, None] / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        if fam == (Family.P0, Family.P1):
            return h[:, None, None] / 2.0 * np.array([[1.0, 1.0]])
        if fam == (Family.P1, Family.P0):
            return h[:, None, None] / 2.0 * np.array([[1.0], [1.0]])
        return h[:, None, None] * np.ones((1, 1, 1))

    if trial.family != Family.P1:
        raise InvalidArgumentError(f"{kind.value} pairing requires a P1 trial space.")

    if kind == PairingKind.VALUE_DERIVATIVE:
        if test.family == Family.P1:
            return one[:, None, None] * np.array([[-0.5, 0.5], [-0.5, 0.5]])
        return one[:, None, None] * np.array([[-1.0, 1.0]])

    if test.family != Family.P1:
        raise InvalidArgumentError("derivative-derivative pairing requires P1 test and trial spaces.")
    return (1.0 / h)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])


def _pairing_same_partition(test: FESpace1D, trial: FESpace1D, kind: PairingKind) -> sp.csr_matrix:
    blocks = _element_blocks(test, trial, kind)
    ldt, ldx = _local_dofs(test), _local_dofs(trial)
    rows = np.broadcast_to(ldt[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(ldx[:, None, :], blocks.shape).ravel()
    vals = blocks.ravel()
    mask = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[mask], (rows[mask], cols[mask])), shape=(test.dim, trial.dim)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def prolongation(coarse: FESpace1D, fine: FESpace1D) -> sp.csr_matrix:
    """Matrix of the embedding coarse -> fine (rows: fine dofs, cols: coarse dofs)."""
    if coarse.family != fine.family:
        raise InvalidArgumentError("Prolongation needs spaces of the same family.")
    if not fine.partition.is_refinement_of(coarse.partition):
        raise InvalidArgumentError("Fine partition is not a refinement of the coarse partition.")

    if coarse.family == Family.P0:
        mids = fine.dof_points()
        elem = _locate(coarse.partition, mids)
        return sp.csr_matrix(
            (np.ones(fine.dim), (np.arange(fine.dim), elem)), shape=(fine.dim, coarse.dim)
        )

    full = basis_matrix(coarse, fine.partition.points)
    fine_dofs = fine.node_dofs()
    dropped = full[np.flatnonzero(fine_dofs < 0)]
    if dropped.nnz and np.max(np.abs(dropped.data)) > _POINT_TOL:
        raise InvalidArgumentError(
            f"Coarse space ({coarse.constraint.value}) is not contained in the fine space "
            f"({fine.constraint.value})."
        )
    mat = full[np.flatnonzero(fine_dofs >= 0)].tocsr()
    mat.eliminate_zeros()
    return mat


def pairing_matrix(test: FESpace1D, trial: FESpace1D, kind: PairingKind = PairingKind.VALUE_VALUE) -> sp.csr_matrix:
    """Entry (i, j) = integral of b(phi_j, psi_i) for the requested pairing kind.

    value-value: phi_j psi_i, value-of-derivative: phi_j' psi_i,
    derivative-derivative: phi_j' psi_i'.  The partitions must coincide or
    be nested in either direction.
    """
    kind = PairingKind(kind)
    if kind != PairingKind.VALUE_VALUE and trial.family != Family.P1:
        raise InvalidArgumentError(f"{kind.value} pairing requires a P1 trial space.")

    if test.partition.same_as(trial.partition):
        return _pairing_same_partition(test, trial.on_partition(test.partition), kind)

    if test.partition.is_refinement_of(trial.partition):
        trial_fine = trial.on_partition(test.partition)
        return (_pairing_same_partition(test, trial_fine, kind) @ prolongation(trial, trial_fine)).tocsr()

    if trial.partition.is_refinement_of(test.partition):
        test_fine = test.on_partition(trial.partition)
        return (prolongation(test, test_fine).T @ _pairing_same_partition(test_fine, trial, kind)).tocsr()

    raise InvalidArgumentError("Test and trial partitions are neither equal nor nested.")


def assemble_1d(space: FESpace1D, kind: MatrixKind) -> sp.csr_matrix:
    """Mass, stiffness or convection (entry (i, j) = integral phi_j' phi_i) matrix."""
    kind = MatrixKind(kind)
    if kind != MatrixKind.MASS and space.family != Family.P1:
        raise InvalidArgumentError(f"{kind.value} matrix requires a P1 space.")
    pairing = {
        MatrixKind.MASS: PairingKind.VALUE_VALUE,
        MatrixKind.STIFFNESS: PairingKind.DERIVATIVE_DERIVATIVE,
        MatrixKind.CONVECTION: PairingKind.VALUE_DERIVATIVE,
    }[kind]
    return _pairing_same_partition(space, space, pairing)


# ==================== DUAL NORM GRAM ====================


def _hat_antiderivatives(space: FESpace1D, x: np.ndarray) -> np.ndarray:
    """Phi_k(x) = integral_0^x phi_k for every interior hat, shape (len(x), dim)."""
    pts = space.partition.points
    a, m, b = pts[:-2], pts[1:-1], pts[2:]
    hl, hr = m - a, b - m
    X = x[:, None]
    left = (np.clip(X, a, m) - a) ** 2 / (2.0 * hl)
    s = np.clip(X, m, b) - m
    right = s - s**2 / (2.0 * hr)
    return left + right


def hminus1_gram(space: FESpace1D, order: int = 4) -> np.ndarray:
    """Exact Gram matrix W[i, j] = <phi_i, phi_j>_{H^{-1}} of a zero-both P1 space.

    With -w_k'' = phi_k and w_k(0) = w_k(L) = 0 one has w_k' = c_k - Phi_k,
    Phi_k the antiderivative of phi_k and c_k its mean, so
    W[i, j] = integral (Phi_i - c_i)(Phi_j - c_j).  The integrand is
    piecewise quartic and Gauss quadrature of degree >= 4 is exact.
    """
    if space.family != Family.P1 or space.constraint != Constraint.ZERO_BOTH:
        raise InvalidArgumentError("hminus1_gram requires a zero-both P1 space.")
    pts = space.partition.points
    g, gw = gauss_legendre(max(order, 4))
    h = np.diff(pts)
    x = (pts[:-1, None] + h[:, None] * g[None, :]).ravel()
    w = (h[:, None] * gw[None, :]).ravel()

    phi = _hat_antiderivatives(space, x)
    centered = phi - (w @ phi) / space.partition.length
    gram = centered.T @ (w[:, None] * centered)
    return 0.5 * (gram + gram.T)
