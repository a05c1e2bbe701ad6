import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from app.config import get_settings
from app.exceptions import InvalidArgumentError, SolverFailureError

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, sp.spmatrix]


def _is_diagonal(mat: sp.spmatrix) -> bool:
    coo = sp.coo_matrix(mat)
    return bool(np.all(coo.row[coo.data != 0.0] == coo.col[coo.data != 0.0]))


def sparse_factor(mat: Matrix, name: str = "matrix"):
    """splu factorization of a square matrix; a singular pivot raises SolverFailureError."""
    csc = sp.csc_matrix(mat)
    if csc.shape[0] != csc.shape[1]:
        raise InvalidArgumentError(f"{name} is not square: {csc.shape}.")
    try:
        return spla.splu(csc)
    except RuntimeError as exc:
        raise SolverFailureError(f"Factorization of {name} failed: {exc}", {"dim": csc.shape[0]}) from exc


def condition_estimate(mat: Matrix, lu) -> float:
    """1-norm condition estimate ||K||_1 ||K^{-1}||_1 from an existing factorization."""
    n = mat.shape[0]
    inverse = spla.LinearOperator(
        shape=(n, n),
        matvec=lu.solve,
        rmatvec=lambda v: lu.solve(np.asarray(v, dtype=float), trans="T"),
        dtype=float,
    )
    try:
        return float(spla.onenormest(sp.csc_matrix(mat)) * spla.onenormest(inverse))
    except (RuntimeError, ValueError):
        return float("inf")


# ==================== KRONECKER GRAMS ====================


class KroneckerSPD:
    """The SPD matrix M_t (x) A_x held by its two factorized factors.

    A diagonal temporal factor (P0 in time) is inverted entrywise, so the
    solve is one spatial factorization applied to every time slab.
    """

    def __init__(self, mt: sp.spmatrix, ax: sp.spmatrix):
        self.mt = sp.csr_matrix(mt)
        self.ax = sp.csr_matrix(ax)
        self.nt, self.nx = self.mt.shape[0], self.ax.shape[0]
        self.diagonal = _is_diagonal(self.mt)
        if self.diagonal:
            self._d = self.mt.diagonal()
            if np.any(self._d <= 0.0):
                raise SolverFailureError("Temporal Gram has a non-positive diagonal entry.")
            self._mt_lu = None
        else:
            self._mt_lu = sparse_factor(self.mt, "temporal Gram")
        self._ax_lu = sparse_factor(self.ax, "spatial Gram")

    @property
    def dim(self) -> int:
        return self.nt * self.nx

    def matrix(self) -> sp.csr_matrix:
        return sp.kron(self.mt, self.ax, format="csr")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return kron_matvec(self.mt, self.ax, x)

    def solve(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.dim:
            raise InvalidArgumentError(f"Right-hand side has {f.shape[0]} rows, Gram has {self.dim}.")
        k = 1 if f.ndim == 1 else f.shape[1]
        F = f.reshape(self.nt, self.nx, k)
        Y = self._ax_lu.solve(F.transpose(1, 0, 2).reshape(self.nx, self.nt * k))
        Y = Y.reshape(self.nx, self.nt, k).transpose(1, 0, 2)
        if self.diagonal:
            X = Y / self._d[:, None, None]
        else:
            X = self._mt_lu.solve(np.ascontiguousarray(Y).reshape(self.nt, self.nx * k))
        return X.reshape(f.shape)

    def dual_norm(self, f: np.ndarray) -> float:
        """sqrt(f^T G^{-1} f)."""
        f = np.asarray(f, dtype=float)
        return float(np.sqrt(max(f @ self.solve(f), 0.0)))


def kron_matvec(a: Matrix, b: Matrix, x: np.ndarray) -> np.ndarray:
    """(a (x) b) x without forming the Kronecker product."""
    X = np.asarray(x, dtype=float).reshape(a.shape[1], b.shape[1])
    Y = a @ X
    Y = np.asarray((b @ np.asarray(Y).T)).T
    return np.asarray(Y).ravel()


def kron_banded(terms: Sequence[Tuple[sp.spmatrix, np.ndarray]]) -> np.ndarray:
    """Upper banded storage of sum_k T_k (x) S_k for symmetric tridiagonal T_k.

    The result feeds ``scipy.linalg.solveh_banded``; the block bandwidth is
    one temporal block, so the scalar bandwidth is 2 n_x - 1.
    """
    nt = terms[0][0].shape[0]
    nx = terms[0][1].shape[0]
    diag = np.zeros((nt, nx, nx))
    upper = np.zeros((max(nt - 1, 0), nx, nx))
    for T, S in terms:
        T = sp.csr_matrix(T)
        S = np.asarray(S.todense() if sp.issparse(S) else S, dtype=float)
        coo = T.tocoo()
        if np.any(np.abs(coo.row - coo.col) > 1):
            raise InvalidArgumentError("Temporal factor is not tridiagonal.")
        d = T.diagonal()
        diag += d[:, None, None] * S[None, :, :]
        if nt > 1:
            upper += T.diagonal(1)[:, None, None] * S[None, :, :]

    u = 2 * nx - 1
    ab = np.zeros((u + 1, nt * nx))
    p, q = np.meshgrid(np.arange(nx), np.arange(nx), indexing="ij")
    for a in range(nt):
        for b, block in ((a, diag[a]), (a + 1, upper[a] if a < nt - 1 else None)):
            if block is None:
                continue
            I = a * nx + p
            J = b * nx + q
            mask = I <= J
            ab[u + I[mask] - J[mask], J[mask]] = block[mask]
    return ab


def solve_banded_spd(ab: np.ndarray, rhs: np.ndarray, name: str = "Gram") -> np.ndarray:
    try:
        return la.solveh_banded(ab, rhs)
    except la.LinAlgError as exc:
        raise SolverFailureError(f"{name} is not positive definite: {exc}", {"dim": ab.shape[1]}) from exc


# ==================== EIGENVALUES ====================


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    diagnostics: Dict[str, float] = field(default_factory=dict)


def _dense(mat: Matrix) -> np.ndarray:
    return np.asarray(mat.todense() if sp.issparse(mat) else mat, dtype=float)


def smallest_generalized_eig(K: Matrix, W: Matrix, name: str = "pencil") -> EigenResult:
    """Smallest eigenpair of K q = lam W q, K symmetric, W SPD.

    Pencils up to DENSE_EIGEN_LIMIT use LAPACK, larger ones shift-invert
    Lanczos around zero.
    """
    settings = get_settings()
    n = K.shape[0]
    if n == 0:
        raise InvalidArgumentError(f"{name}: empty eigenproblem.")

    if n <= settings.DENSE_EIGEN_LIMIT:
        Kd, Wd = _dense(K), _dense(W)
        Kd, Wd = 0.5 * (Kd + Kd.T), 0.5 * (Wd + Wd.T)
        try:
            vals, vecs = la.eigh(Kd, Wd, subset_by_index=[0, 0])
        except la.LinAlgError as exc:
            raise SolverFailureError(f"{name}: dense eigensolver failed: {exc}", {"dim": n}) from exc
        lam, q = float(vals[0]), vecs[:, 0]
        solver = 0.0
    else:
        lu = sparse_factor(K, f"{name} numerator")
        op_inv = spla.LinearOperator(shape=K.shape, matvec=lu.solve, dtype=float)
        try:
            vals, vecs = spla.eigsh(
                sp.csr_matrix(K), k=1, M=sp.csr_matrix(W), sigma=0.0, which="LM",
                OPinv=op_inv, tol=settings.EIGEN_TOL,
            )
        except spla.ArpackNoConvergence as exc:
            raise SolverFailureError(f"{name}: Lanczos did not converge.", {"dim": n}) from exc
        lam, q = float(vals[0]), vecs[:, 0]
        solver = 1.0

    Kq, Wq = K @ q, W @ q
    residual = float(np.linalg.norm(Kq - lam * Wq) / max(np.linalg.norm(Kq), np.finfo(float).tiny))
    logger.debug("%s: dim=%d, lambda_min=%.6g, residual=%.2e", name, n, lam, residual)
    return EigenResult(lam, q, {"dim": float(n), "residual": residual, "sparse": solver})


def deflated_pencil(K: Matrix, W: Matrix, basis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Restriction Q^T K Q, Q^T W Q of a pencil to the span of *basis* columns."""
    Q = np.asarray(basis, dtype=float)
    KQ = np.asarray(K @ Q)
    WQ = np.asarray(W @ Q)
    return Q.T @ KQ, Q.T @ WQ


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    inner: Callable[[np.ndarray, np.ndarray], float],
    dim: int,
    tol: Optional[float] = None,
    maxiter: Optional[int] = None,
    seed: Optional[int] = None,
) -> EigenResult:
    """Dominant eigenvalue of an operator self-adjoint in the *inner* product.

    Stops when the Rayleigh quotient changes by less than tol relative;
    hitting maxiter is logged and the last quotient is returned.
    """
    settings = get_settings()
    tol = settings.POWER_TOL if tol is None else tol
    maxiter = settings.POWER_MAXITER if maxiter is None else maxiter
    rng = np.random.default_rng(settings.POWER_SEED if seed is None else seed)

    x = rng.normal(size=dim)
    x /= np.sqrt(inner(x, x))
    lam = 0.0
    converged = False
    k = 0
    for k in range(1, maxiter + 1):
        y = apply(x)
        lam_new = float(inner(x, y))
        norm_y = np.sqrt(max(inner(y, y), 0.0))
        if norm_y == 0.0:
            lam, converged = 0.0, True
            break
        x = y / norm_y
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam, converged = lam_new, True
            break
        lam = lam_new

    if not converged:
        logger.warning("power iteration stopped at maxiter=%d (lambda=%.6g)", maxiter, lam)
    return EigenResult(lam, x, {"iterations": float(k), "converged": float(converged)})
