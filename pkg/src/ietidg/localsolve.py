"""Solvers for the interior block A_II of a patch.

When the geometry metric separates into products of univariate factors
(annular sectors, axis-aligned rectangles) A_II is a Kronecker sum and is
inverted by fast diagonalization. Otherwise a dense Cholesky or sparse LU
factorization is used.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LocalSystem, metric_tensor, volume_geometry
from .bspline import KnotVector, eval_basis_many

DENSE_LIMIT = 5000


class CoercivityError(np.linalg.LinAlgError):
    pass


def _weighted_1d(kv: KnotVector, x, w, coef):
    """Weighted 1D stiffness and mass matrices; ``x, w, coef`` are flat point arrays."""
    first, N = eval_basis_many(kv, x)
    _, dN = eval_basis_many(kv, x, 1)
    p = kv.degree
    idx = first[:, None] + np.arange(p + 1)
    rows = np.repeat(idx, p + 1, axis=1).ravel()
    cols = np.tile(idx, (1, p + 1)).ravel()
    cw = (coef * w)[:, None, None]
    K = sp.csr_matrix(((cw * dN[:, :, None] * dN[:, None, :]).ravel(), (rows, cols)),
                      shape=(kv.dim, kv.dim)).toarray()
    M = sp.csr_matrix(((cw * N[:, :, None] * N[:, None, :]).ravel(), (rows, cols)),
                      shape=(kv.dim, kv.dim)).toarray()
    return K, M


def _rank_one(A, tol):
    i0, j0 = np.unravel_index(np.argmax(np.abs(A)), A.shape)
    a = A[:, j0].copy()
    b = A[i0, :] / A[i0, j0]
    if np.max(np.abs(A - np.outer(a, b))) > tol * np.max(np.abs(A)):
        return None
    if a[0] < 0:
        a, b = -a, -b
    return a, b


def separable_factors(G, space, tol: float = 1e-11):
    """Univariate 1D matrices ``(Ku1, Mu2, Mv1, Kv2)`` if the metric separates, else ``None``.

    The volume stiffness then equals ``kron(Mv1, Ku1) + kron(Kv2, Mu2)``
    (u index fastest).
    """
    xu, wu, xv, wv, _, J, det = volume_geometry(G, space)
    K = metric_tensor(J, det)
    if np.max(np.abs(K[..., 0, 1])) > tol * np.max(np.abs(K)):
        return None
    f11 = _rank_one(K[..., 0, 0], tol)
    f22 = _rank_one(K[..., 1, 1], tol)
    if f11 is None or f22 is None:
        return None
    (a1, b1), (a2, b2) = f11, f22
    if np.any(a1 <= 0) or np.any(b1 <= 0) or np.any(a2 <= 0) or np.any(b2 <= 0):
        return None
    Ku1, _ = _weighted_1d(space.kv_u, xu.ravel(), wu.ravel(), a1)
    _, Mu2 = _weighted_1d(space.kv_u, xu.ravel(), wu.ravel(), a2)
    _, Mv1 = _weighted_1d(space.kv_v, xv.ravel(), wv.ravel(), b1)
    Kv2, _ = _weighted_1d(space.kv_v, xv.ravel(), wv.ravel(), b2)
    return Ku1, Mu2, Mv1, Kv2


class DenseCholeskySolver:
    kind = "dense"

    def __init__(self, A_II):
        A = A_II.toarray() if sp.issparse(A_II) else np.asarray(A_II)
        self.n = A.shape[0]
        try:
            self._fac = sla.cho_factor(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise CoercivityError(str(exc)) from exc

    def solve(self, R):
        if self.n == 0:
            return np.zeros_like(R)
        return sla.cho_solve(self._fac, R)

    def schur_correction(self, A_IG, f_I):
        X = self.solve(A_IG.toarray())
        return A_IG.T @ X, A_IG.T @ self.solve(f_I)


class SparseLUSolver(DenseCholeskySolver):
    kind = "sparse"

    def __init__(self, A_II):
        self.n = A_II.shape[0]
        self._lu = spla.splu(sp.csc_matrix(A_II), permc_spec="MMD_AT_PLUS_A")

    def solve(self, R):
        return self._lu.solve(np.asarray(R, float))


class FastDiagonalizationSolver:
    """A_II^{-1} through simultaneous diagonalization of the 1D factors."""

    kind = "fdm"

    def __init__(self, factors):
        Ku1, Mu2, Mv1, Kv2 = (F[1:-1, 1:-1] for F in factors)
        self.mu_, self.mv_ = Ku1.shape[0], Kv2.shape[0]
        self.n = self.mu_ * self.mv_
        if self.n == 0:
            self.lam = self.mu = np.zeros(0)
            self.U = np.zeros((self.mu_, self.mu_))
            self.V = np.zeros((self.mv_, self.mv_))
            return
        self.lam, self.U = sla.eigh(Ku1, Mu2)
        self.mu, self.V = sla.eigh(Kv2, Mv1)
        self.denom = self.mu[:, None] + self.lam[None, :]
        if np.min(self.denom) <= 0:
            raise CoercivityError("interior stiffness is not positive definite")

    def solve(self, R):
        R = np.asarray(R, float)
        if self.n == 0:
            return np.zeros_like(R)
        vec = R.ndim == 1
        X = R.reshape(self.mv_, self.mu_, -1) if not vec else R.reshape(self.mv_, self.mu_, 1)
        Y = np.einsum("ja,jik,ib->abk", self.V, X, self.U, optimize=True)
        Y /= self.denom[:, :, None]
        Z = np.einsum("ja,abk,ib->jik", self.V, Y, self.U, optimize=True)
        return Z.reshape(self.n) if vec else Z.reshape(self.n, -1)

    def schur_correction(self, A_IG, f_I, chunk: int = 16):
        nG = A_IG.shape[1]
        if self.n == 0 or nG == 0:
            return np.zeros((nG, nG)), np.zeros(nG)
        coo = sp.coo_matrix(A_IG)
        j, i = np.divmod(coo.row, self.mu_)
        P = sp.csr_matrix((coo.data, (coo.col * self.mu_ + i, j)), shape=(nG * self.mu_, self.mv_))
        F = np.asarray(f_I, float).reshape(self.mv_, self.mu_)
        Yf = self.V.T @ F @ self.U / self.denom
        corr = np.zeros((nG, nG))
        gcorr = np.zeros(nG)
        for a0 in range(0, self.mv_, chunk):
            a = slice(a0, min(a0 + chunk, self.mv_))
            Z = np.asarray(P @ self.V[:, a]).reshape(nG, self.mu_, -1)
            Y = (np.swapaxes(Z, 1, 2) @ self.U).reshape(nG, -1)
            d = (1.0 / self.denom[a]).ravel()
            corr += (Y * d) @ Y.T
            gcorr += Y @ (Yf[a].ravel())
        return corr, gcorr


def interior_solver(system: LocalSystem, G=None, space=None, method: str = "auto"):
    """Pick a solver for A_II of ``system``; ``G``/``space`` enable fast diagonalization."""
    A_II = system.A[system.I][:, system.I]
    if method in ("auto", "fdm") and G is not None:
        factors = separable_factors(G, space)
        if factors is not None:
            return FastDiagonalizationSolver(factors)
        if method == "fdm":
            raise ValueError("geometry metric is not separable")
    if method == "sparse" or (method == "auto" and A_II.shape[0] > DENSE_LIMIT):
        return SparseLUSolver(A_II)
    return DenseCholeskySolver(A_II)
