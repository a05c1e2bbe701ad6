"""Gauss, collapsed-triangle and breakline-aware space-time quadrature."""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from app.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

# Relative overlap below which the breakline only grazes a cell
_GRAZE_TOL = 1e-12


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Points and weights on [0, 1], exact for polynomials of degree *order*."""
    if order < 0:
        raise InvalidArgumentError(f"Quadrature order must be >= 0, got {order}.")
    n = max(1, math.ceil((order + 1) / 2))
    x, w = np.polynomial.legendre.leggauss(n)
    pts, wts = 0.5 * (x + 1.0), 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Returns points of shape (n, 2) and weights summing to 1/2, exact for
    polynomials of total degree *order*.
    """
    # The Duffy map adds one degree in the collapsed direction
    u, wu = gauss_legendre(order + 1)
    v, wv = gauss_legendre(order)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv) * (1.0 - uu)
    pts = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    wts = ww.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def merged_points(*point_sets: Sequence[float]) -> np.ndarray:
    """Sorted union of breakpoint sets, near-duplicates removed."""
    arrays = [np.asarray(p, dtype=float).ravel() for p in point_sets if p is not None]
    arrays = [a for a in arrays if a.size]
    if not arrays:
        return np.empty(0)
    merged = np.unique(np.concatenate(arrays))
    if merged.size < 2:
        return merged
    tol = _GRAZE_TOL * (merged[-1] - merged[0])
    keep = np.concatenate([[True], np.diff(merged) > tol])
    merged = merged[keep]
    # Endpoints come from the partitions themselves and must survive
    merged[-1] = max(np.max(a) for a in arrays)
    return merged


def interval_rule(points: Sequence[float], order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule over the cells of a 1D partition."""
    pts = np.asarray(points, dtype=float)
    g, gw = gauss_legendre(order)
    h = np.diff(pts)
    x = (pts[:-1, None] + h[:, None] * g[None, :]).ravel()
    w = (h[:, None] * gw[None, :]).ravel()
    return x, w


@dataclass(frozen=True, eq=False)
class SpaceTimeRule:
    """Quadrature points (t, x) and weights over a space-time region."""

    t: np.ndarray
    x: np.ndarray
    w: np.ndarray

    @property
    def size(self) -> int:
        return self.w.size

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.w, values))


def _clip_half_plane(polygon: List[np.ndarray], sign: float) -> List[np.ndarray]:
    """Sutherland-Hodgman clip of *polygon* against sign * (t - x) >= 0."""
    out: List[np.ndarray] = []
    n = len(polygon)
    for k in range(n):
        p, q = polygon[k], polygon[(k + 1) % n]
        fp = sign * (p[0] - p[1])
        fq = sign * (q[0] - q[1])
        if fp >= 0.0:
            out.append(p)
        if (fp > 0.0 > fq) or (fp < 0.0 < fq):
            s = fp / (fp - fq)
            out.append(p + s * (q - p))
    return out


def _cut_cell_triangles(t0: float, t1: float, x0: float, x1: float) -> List[np.ndarray]:
    rect = [
        np.array([t0, x0]),
        np.array([t1, x0]),
        np.array([t1, x1]),
        np.array([t0, x1]),
    ]
    triangles = []
    for sign in (1.0, -1.0):
        piece = _clip_half_plane(rect, sign)
        for k in range(1, len(piece) - 1):
            triangles.append(np.stack([piece[0], piece[k], piece[k + 1]]))
    return triangles


def _map_triangles(triangles: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ref, ref_w = triangle_rule(order)
    p0 = triangles[:, 0, :]
    e1 = triangles[:, 1, :] - p0
    e2 = triangles[:, 2, :] - p0
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = p0[:, None, :] + ref[None, :, 0, None] * e1[:, None, :] + ref[None, :, 1, None] * e2[:, None, :]
    w = det[:, None] * ref_w[None, :]
    return pts[..., 0].ravel(), pts[..., 1].ravel(), w.ravel()


def spacetime_rule(
    t_points: Sequence[float],
    x_points: Sequence[float],
    order: int,
    breakline: bool = False,
) -> SpaceTimeRule:
    """Tensor Gauss rule over the cells of the (t_points x x_points) mesh.

    With ``breakline`` set, every cell whose interior meets t = x is split
    along the line and integrated piecewise with triangle rules.
    """
    tp = np.asarray(t_points, dtype=float)
    xp = np.asarray(x_points, dtype=float)
    g, gw = gauss_legendre(order)
    ht, hx = np.diff(tp), np.diff(xp)
    if np.any(ht <= 0.0) or np.any(hx <= 0.0):
        raise InvalidArgumentError("Quadrature mesh points must be strictly increasing.")

    tq = tp[:-1, None] + ht[:, None] * g[None, :]
    xq = xp[:-1, None] + hx[:, None] * g[None, :]
    wt = ht[:, None] * gw[None, :]
    wx = hx[:, None] * gw[None, :]
    nt, nx, q = ht.size, hx.size, g.size

    T = np.broadcast_to(tq[:, None, :, None], (nt, nx, q, q))
    X = np.broadcast_to(xq[None, :, None, :], (nt, nx, q, q))
    W = wt[:, None, :, None] * wx[None, :, None, :]

    if not breakline:
        return SpaceTimeRule(t=T.ravel(), x=X.ravel(), w=W.ravel())

    lo = np.maximum(tp[:-1, None], xp[None, :-1])
    hi = np.minimum(tp[1:, None], xp[None, 1:])
    scale = np.minimum(ht[:, None], hx[None, :])
    cut = (hi - lo) > _GRAZE_TOL * scale
    keep = ~cut

    parts_t = [T[keep].ravel()]
    parts_x = [X[keep].ravel()]
    parts_w = [W[keep].ravel()]

    cells = np.argwhere(cut)
    if cells.size:
        triangles = []
        for i, j in cells:
            triangles.extend(_cut_cell_triangles(tp[i], tp[i + 1], xp[j], xp[j + 1]))
        t_tri, x_tri, w_tri = _map_triangles(np.asarray(triangles), order)
        parts_t.append(t_tri)
        parts_x.append(x_tri)
        parts_w.append(w_tri)
    logger.debug("spacetime_rule: %d x %d cells, %d cut by the breakline", nt, nx, len(cells))

    return SpaceTimeRule(
        t=np.concatenate(parts_t),
        x=np.concatenate(parts_x),
        w=np.concatenate(parts_w),
    )
