"""B-spline spaces and degree-2 NURBS geometry maps on the unit square.

Univariate spaces are open knot vectors on [0, 1] built by dyadic uniform
refinement; bivariate spaces are tensor products with lexicographic
numbering (u index fastest). Basis evaluation is the Cox-de Boor recursion,
vectorized over evaluation points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class InvalidSmoothnessError(ValueError):
    pass


class DomainError(ValueError):
    pass


class InvalidGeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector of degree ``degree`` on [0, 1]."""

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 1:
            raise ValueError(f"degree must be >= 1, got {p}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knot vector must span [0, 1]")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-p - 1:] != 1.0):
            raise ValueError("knot vector must be open (end multiplicity p+1)")
        if self.dim < p + 1:
            raise ValueError("too few knots")

    @property
    def dim(self) -> int:
        return len(self.knots) - self.degree - 1

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @cached_property
    def multiplicities(self) -> np.ndarray:
        return np.array([np.count_nonzero(self.knots == b) for b in self.breakpoints])

    @property
    def num_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def mesh_size(self) -> float:
        """Largest element width in the parameter domain."""
        return float(np.max(np.diff(self.breakpoints)))

    def support(self, i: int) -> tuple[float, float]:
        return float(self.knots[i]), float(self.knots[i + self.degree + 1])

    def greville(self) -> np.ndarray:
        p = self.degree
        return np.array([self.knots[i + 1:i + p + 1].mean() for i in range(self.dim)])

    def __repr__(self):
        return f"KnotVector(p={self.degree}, dim={self.dim}, elements={self.num_elements})"


def make_knot_vector(p: int, r: int, s: int) -> KnotVector:
    """Uniform open knot vector with ``2**r`` elements and C^s interior continuity."""
    if not 0 <= s <= p - 1:
        raise InvalidSmoothnessError(f"smoothness s={s} must satisfy 0 <= s <= p-1 (p={p})")
    if r < 0:
        raise ValueError(f"refinement level must be >= 0, got {r}")
    n_el = 2 ** r
    interior = np.repeat(np.arange(1, n_el) / n_el, p - s)
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


def find_span(kv: KnotVector, x) -> np.ndarray:
    """Knot span index; right limits everywhere except x=1 (left limit)."""
    x = np.asarray(x, dtype=float)
    span = np.searchsorted(kv.knots, x, side="right") - 1
    return np.clip(span, kv.degree, kv.dim - 1)


def _basis_funs(knots: np.ndarray, span: np.ndarray, x: np.ndarray, p: int) -> np.ndarray:
    m = x.shape[0]
    N = np.zeros((m, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def eval_basis_many(kv: KnotVector, x, deriv_order: int = 0):
    """Evaluate the nonzero basis functions at many points.

    Returns ``(first, values)`` where ``first`` holds the index of the first
    nonzero function per point and ``values`` has shape ``(npts, p+1)``.
    For ``deriv_order=1`` the values are first derivatives.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise DomainError("evaluation points must lie in [0, 1]")
    p = kv.degree
    t = kv.knots
    span = find_span(kv, x)
    first = span - p
    if deriv_order == 0:
        return first, _basis_funs(t, span, x, p)
    if deriv_order != 1:
        raise ValueError("deriv_order must be 0 or 1")
    lower = _basis_funs(t, span, x, p - 1)
    # lower[:, j] is N_{span-p+1+j, p-1}; pad so that index j refers to span-p+j
    padded = np.zeros((x.shape[0], p + 2))
    padded[:, 1:p + 1] = lower
    d = np.zeros((x.shape[0], p + 1))
    for j in range(p + 1):
        i = first + j
        den_a = t[i + p] - t[i]
        den_b = t[i + p + 1] - t[i + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(den_a > 0, padded[:, j] / den_a, 0.0)
            b = np.where(den_b > 0, padded[:, j + 1] / den_b, 0.0)
        d[:, j] = p * (a - b)
    return first, d


def eval_basis(kv: KnotVector, x: float, deriv_order: int = 0) -> tuple[int, np.ndarray]:
    """Scalar convenience wrapper around :func:`eval_basis_many`."""
    first, vals = eval_basis_many(kv, [x], deriv_order)
    return int(first[0]), vals[0]


def basis_matrix(kv: KnotVector, x, deriv_order: int = 0) -> np.ndarray:
    """Dense ``(npts, dim)`` collocation matrix."""
    first, vals = eval_basis_many(kv, x, deriv_order)
    out = np.zeros((len(first), kv.dim))
    rows = np.arange(len(first))[:, None]
    out[rows, first[:, None] + np.arange(kv.degree + 1)] = vals
    return out


@dataclass(frozen=True, eq=False)
class TensorSplineSpace:
    kv_u: KnotVector
    kv_v: KnotVector

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv_u.dim, self.kv_v.dim

    @property
    def dim(self) -> int:
        return self.kv_u.dim * self.kv_v.dim

    @property
    def degree(self) -> int:
        return max(self.kv_u.degree, self.kv_v.degree)

    def index(self, i, j):
        return np.asarray(i) + self.kv_u.dim * np.asarray(j)

    def unravel(self, g):
        return np.asarray(g) % self.kv_u.dim, np.asarray(g) // self.kv_u.dim

    def eval(self, u, v, deriv: bool = False):
        """Nonzero tensor basis at points ``(u[k], v[k])``.

        Returns global indices ``(npts, (p+1)**2)`` and values of the same
        shape; with ``deriv=True`` also the parametric gradients
        ``(npts, nloc, 2)``.
        """
        fu, Nu = eval_basis_many(self.kv_u, u, 0)
        fv, Nv = eval_basis_many(self.kv_v, v, 0)
        pu, pv = self.kv_u.degree, self.kv_v.degree
        iu = fu[:, None] + np.arange(pu + 1)
        jv = fv[:, None] + np.arange(pv + 1)
        idx = (iu[:, None, :] + self.kv_u.dim * jv[:, :, None]).reshape(len(fu), -1)
        val = (Nv[:, :, None] * Nu[:, None, :]).reshape(len(fu), -1)
        if not deriv:
            return idx, val
        _, dNu = eval_basis_many(self.kv_u, u, 1)
        _, dNv = eval_basis_many(self.kv_v, v, 1)
        grad = np.empty(val.shape + (2,))
        grad[..., 0] = (Nv[:, :, None] * dNu[:, None, :]).reshape(len(fu), -1)
        grad[..., 1] = (dNv[:, :, None] * Nu[:, None, :]).reshape(len(fu), -1)
        return idx, val, grad


def make_space(p: int, r: int, s: int) -> TensorSplineSpace:
    kv = make_knot_vector(p, r, s)
    return TensorSplineSpace(kv, kv)


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Rational tensor-product map from the unit square into the plane."""

    space: TensorSplineSpace
    control_points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float).reshape(-1, 2)
        if cp.shape[0] != self.space.dim:
            raise InvalidGeometryError(
                f"expected {self.space.dim} control points, got {cp.shape[0]}")
        w = np.ones(cp.shape[0]) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (cp.shape[0],):
            raise InvalidGeometryError("weights must have one entry per control point")
        cp.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    def __call__(self, u, v):
        return eval_geometry(self, u, v)


def eval_geometry(G: GeometryMap, u, v):
    """Points ``(npts, 2)`` and Jacobians ``(npts, 2, 2)``, ``J[:, a, b] = dx_a/du_b``."""
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    u = np.atleast_1d(np.asarray(u, float))
    v = np.atleast_1d(np.asarray(v, float))
    u, v = np.broadcast_arrays(u, v)
    idx, N, dN = G.space.eval(u.ravel(), v.ravel(), deriv=True)
    w = G.weights[idx]
    P = G.control_points[idx]
    W = np.sum(w * N, axis=1)
    if np.any(np.abs(W) < 1e-300):
        raise InvalidGeometryError("vanishing NURBS weight denominator")
    dW = np.einsum("nk,nkd->nd", w, dN)
    X = np.einsum("nk,nkc->nc", w * N, P) / W[:, None]
    dX = np.einsum("nk,nkc,nkd->ncd", w, P, dN)
    J = (dX - X[:, :, None] * dW[:, None, :]) / W[:, None, None]
    if scalar:
        return X[0], J[0]
    return X, J


def _bernstein2_space() -> TensorSplineSpace:
    kv = make_knot_vector(2, 0, 1)
    return TensorSplineSpace(kv, kv)


def bilinear_patch(corners) -> GeometryMap:
    """Degree-2 representation of the bilinear map through four corners.

    ``corners`` are ordered (u,v) = (0,0), (1,0), (0,1), (1,1).
    """
    c = np.asarray(corners, float).reshape(4, 2)
    s = np.array([0.0, 0.5, 1.0])
    uu, vv = np.meshgrid(s, s)  # vv varies along rows -> lexicographic u fastest
    uu, vv = uu.ravel(), vv.ravel()
    cp = (((1 - uu) * (1 - vv))[:, None] * c[0] + (uu * (1 - vv))[:, None] * c[1]
          + ((1 - uu) * vv)[:, None] * c[2] + (uu * vv)[:, None] * c[3])
    return GeometryMap(_bernstein2_space(), cp)


def rectangle(x0: float, y0: float, x1: float, y1: float) -> GeometryMap:
    return bilinear_patch([(x0, y0), (x1, y0), (x0, y1), (x1, y1)])


def annular_sector(r0: float, r1: float, theta0: float, theta1: float) -> GeometryMap:
    """Exact NURBS annular sector; u runs counter-clockwise in angle, v outward in radius.

    Angles in radians, ``0 < theta1 - theta0 <= pi/2``.
    """
    dt = theta1 - theta0
    if not 0 < dt <= np.pi / 2 + 1e-12:
        raise InvalidGeometryError("sector opening must lie in (0, 90] degrees")
    if not 0 < r0 < r1:
        raise InvalidGeometryError("radii must satisfy 0 < r0 < r1")
    half = 0.5 * dt
    mid = theta0 + half
    ang = np.array([theta0, mid, theta1])
    scale = np.array([1.0, 1.0 / np.cos(half), 1.0])
    wu = np.array([1.0, np.cos(half), 1.0])
    radii = np.array([r0, 0.5 * (r0 + r1), r1])
    cp = np.empty((3, 3, 2))  # [j (v), i (u)]
    for j in range(3):
        cp[j, :, 0] = radii[j] * scale * np.cos(ang)
        cp[j, :, 1] = radii[j] * scale * np.sin(ang)
    w = np.tile(wu, 3)
    return GeometryMap(_bernstein2_space(), cp.reshape(-1, 2), w)
