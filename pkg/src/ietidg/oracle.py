"""Reference computations used to validate the domain decomposition solver.

The monolithic assembly evaluates every basis function of a patch with the
plain Cox-de Boor recursion and sums the one-sided patch forms with each
artificial copy identified with the function it copies. The result is the
global SIPG system, which is solved directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import DEFAULT_DELTA
from .bspline import eval_geometry
from .multipatch import MultiPatch, Side, interface_breakpoints, partner_params


def cox_de_boor(knots, p: int, x, deriv: bool = False):
    """All B-splines of degree ``p`` on ``knots`` at points ``x``: array ``(len(x), n)``.

    The last nonempty knot span is closed on the right. With ``deriv`` the
    first derivatives are returned as a second array.
    """
    t = np.asarray(knots, float)
    x = np.atleast_1d(np.asarray(x, float))
    m = len(t) - 1
    last = np.max(np.flatnonzero(t[1:] > t[:-1]))
    N = np.zeros((len(x), m))
    for i in range(m):
        if t[i + 1] > t[i]:
            hi = (x <= t[i + 1]) if i == last else (x < t[i + 1])
            N[:, i] = (x >= t[i]) & hi
    dN = None
    for q in range(1, p + 1):
        if deriv and q == p:
            dN = np.zeros((len(x), m - q))
            for i in range(m - q):
                a = t[i + q] - t[i]
                b = t[i + q + 1] - t[i + 1]
                if a > 0:
                    dN[:, i] += q / a * N[:, i]
                if b > 0:
                    dN[:, i] -= q / b * N[:, i + 1]
        Nn = np.zeros((len(x), m - q))
        for i in range(m - q):
            a = t[i + q] - t[i]
            b = t[i + q + 1] - t[i + 1]
            if a > 0:
                Nn[:, i] += (x - t[i]) / a * N[:, i]
            if b > 0:
                Nn[:, i] += (t[i + q + 1] - x) / b * N[:, i + 1]
        N = Nn
    if deriv:
        if p == 0:
            dN = np.zeros_like(N)
        return N, dN
    return N


def _tensor_basis(space, u, v):
    """Values and parametric gradients of all tensor functions: ``(n, dim)`` and ``(n, dim, 2)``."""
    ku, kv = space.kv_u, space.kv_v
    Bu, dBu = cox_de_boor(ku.knots, ku.degree, u, True)
    Bv, dBv = cox_de_boor(kv.knots, kv.degree, v, True)
    val = (Bv[:, :, None] * Bu[:, None, :]).reshape(len(u), -1)
    gu = (Bv[:, :, None] * dBu[:, None, :]).reshape(len(u), -1)
    gv = (dBv[:, :, None] * Bu[:, None, :]).reshape(len(u), -1)
    return val, np.stack([gu, gv], axis=-1)


def _physical(G, space, u, v):
    X, J = eval_geometry(G, u, v)
    val, grad = _tensor_basis(space, u, v)
    JinvT = np.swapaxes(np.linalg.inv(J), 1, 2)
    return X, J, val, np.einsum("nij,nkj->nki", JinvT, grad)


def _gauss(breaks, order):
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    a, b = np.asarray(breaks[:-1]), np.asarray(breaks[1:])
    return (a[:, None] + (b - a)[:, None] * x).ravel(), ((b - a)[:, None] * w).ravel()


def _eliminated(space, dirichlet, k):
    nu, nv = space.shape
    i, j = np.divmod(np.arange(space.dim), nu)[::-1]
    out = np.zeros(space.dim, bool)
    for kk, side in dirichlet:
        if kk != k:
            continue
        out |= {Side.WEST: i == 0, Side.EAST: i == nu - 1,
                Side.SOUTH: j == 0, Side.NORTH: j == nv - 1}[side]
    return out


@dataclass
class MonolithicSystem:
    A: np.ndarray
    f: np.ndarray
    dofs: list[np.ndarray]   # global index of each tensor function per patch, -1 if eliminated

    def coefficients(self, x: np.ndarray) -> list[np.ndarray]:
        return [np.where(d >= 0, x[np.maximum(d, 0)], 0.0) for d in self.dofs]


def assemble_monolithic(mp: MultiPatch, f=None, delta: float = DEFAULT_DELTA) -> MonolithicSystem:
    """Dense global SIPG system (intended for small problems)."""
    dofs, n = [], 0
    for k, space in enumerate(mp.spaces):
        keep = ~_eliminated(space, mp.dirichlet, k)
        d = -np.ones(space.dim, int)
        d[keep] = np.arange(n, n + keep.sum())
        n += int(keep.sum())
        dofs.append(d)
    A = np.zeros((n, n))
    F = np.zeros(n)

    def scatter_matrix(ri, ci, M):
        rm, cm = ri >= 0, ci >= 0
        A[np.ix_(ri[rm], ci[cm])] += M[np.ix_(rm, cm)]

    for k, (G, space) in enumerate(zip(mp.patches, mp.spaces)):
        order_u, order_v = space.kv_u.degree + 1, space.kv_v.degree + 1
        qu, wu = _gauss(space.kv_u.breakpoints, order_u)
        qv, wv = _gauss(space.kv_v.breakpoints, order_v)
        d = dofs[k]
        for v0, w0 in zip(qv, wv):
            u = qu
            v = np.full_like(qu, v0)
            X, J, val, grad = _physical(G, space, u, v)
            wt = wu * w0 * np.abs(np.linalg.det(J))
            K = np.einsum("n,nai,nbi->ab", wt, grad, grad)
            scatter_matrix(d, d, K)
            if f is not None:
                fv = np.asarray(f(X[:, 0], X[:, 1]), float) * wt
                mask = d >= 0
                F[d[mask]] += (fv @ val)[mask]
        p = space.degree
        for _, iface in mp.interfaces_of(k):
            l = iface.l
            bps = interface_breakpoints(mp, iface)
            t, w = _gauss(bps, max(p, mp.spaces[l].degree) + 1)
            u, v = iface.side_k.params(t)
            _, J, val, grad = _physical(G, space, u, v)
            normal = np.swapaxes(np.linalg.inv(J), 1, 2) @ iface.side_k.outward
            normal /= np.linalg.norm(normal, axis=1)[:, None]
            dn = np.einsum("nai,ni->na", grad, normal)
            ds = w * np.linalg.norm(J[:, :, iface.side_k.tangential_dir], axis=1)
            s = partner_params(mp, iface, t)
            ul, vl = iface.side_l.params(s)
            nb_val, _ = _tensor_basis(mp.spaces[l], ul, vl)
            sigma = delta * p ** 2 / iface.h
            idx = np.concatenate([d, dofs[l]])
            jump = np.concatenate([-val, nb_val], axis=1)
            flux = np.concatenate([dn, np.zeros_like(nb_val)], axis=1)
            jw = jump * ds[:, None]
            M = 0.5 * (jw.T @ flux + flux.T @ jw) + sigma * jw.T @ jump
            scatter_matrix(idx, idx, M)
    return MonolithicSystem(A, F, dofs)


def solve_direct(mp: MultiPatch, f, delta: float = DEFAULT_DELTA):
    """Monolithic solution as per-patch tensor coefficient vectors, plus the system."""
    system = assemble_monolithic(mp, f, delta)
    if len(system.f) == 0:
        return system.coefficients(system.f), system
    x = sla.solve(system.A, system.f, assume_a="pos")
    return system.coefficients(x), system


def dense_matrix(apply, n: int) -> np.ndarray:
    """Materialize a linear operator column by column."""
    out = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        out[:, j] = apply(e)
    return out


def dense_spectrum(apply_A, apply_M, n: int) -> np.ndarray:
    """Eigenvalues of ``M A`` for SPD ``A`` and symmetric ``M``, ascending."""
    A = dense_matrix(apply_A, n)
    M = dense_matrix(apply_M, n)
    L = np.linalg.cholesky(0.5 * (A + A.T))
    return np.linalg.eigvalsh(L.T @ (0.5 * (M + M.T)) @ L)


def dense_kappa(eigenvalues, tol: float = 1e-10) -> float:
    """Condition number over the eigenvalues that are not numerically zero."""
    ev = np.asarray(eigenvalues)
    nz = ev[np.abs(ev) > tol * np.max(np.abs(ev))]
    return float(nz[-1] / nz[0])


def saddle_coarse_basis(S: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Columns solving ``[S C^T; C 0] [psi; mu] = [0; e_i]``."""
    n, m = S.shape[0], C.shape[0]
    K = np.block([[S, C.T], [C, np.zeros((m, m))]])
    rhs = np.vstack([np.zeros((n, m)), np.eye(m)])
    return np.linalg.solve(K, rhs)[:n]


def saddle_dual_operator(S_blocks, C_blocks, coarse_ids, B, g):
    """Dense ``F`` and ``d`` by block elimination of the full dual-primal saddle system.

    ``S_blocks``/``C_blocks`` are per-patch Schur complements and primal
    selectors, ``coarse_ids[k]`` maps patch-k primal rows to global coarse
    indices. The saddle matrix in ``(w_delta, mu, w_pi)`` is built explicitly
    and inverted densely.
    """
    sizes = [S.shape[0] for S in S_blocks]
    nprim = [C.shape[0] for C in C_blocks]
    nw, nmu = sum(sizes), sum(nprim)
    nc = 1 + max((int(np.max(c)) for c in coarse_ids if len(c)), default=-1)
    S = sla.block_diag(*S_blocks) if S_blocks else np.zeros((0, 0))
    C = sla.block_diag(*C_blocks) if nmu else np.zeros((0, nw))
    Psi = np.zeros((nw, nc))
    row = 0
    for Sk, Ck, ids in zip(S_blocks, C_blocks, coarse_ids):
        if len(ids):
            Psi[row:row + Sk.shape[0]][:, ids] += saddle_coarse_basis(Sk, Ck)
        row += Sk.shape[0]
    SPP = Psi.T @ S @ Psi
    K = np.zeros((nw + nmu + nc, nw + nmu + nc))
    K[:nw, :nw] = S
    K[:nw, nw:nw + nmu] = C.T
    K[nw:nw + nmu, :nw] = C
    K[nw + nmu:, nw + nmu:] = SPP
    Bd = B.toarray() if hasattr(B, "toarray") else np.asarray(B)
    G = np.hstack([Bd, np.zeros((Bd.shape[0], nmu)), Bd @ Psi])
    rhs = np.concatenate([g, np.zeros(nmu), Psi.T @ g])
    Kinv = np.linalg.inv(K)
    return G @ Kinv @ G.T, G @ Kinv @ rhs
