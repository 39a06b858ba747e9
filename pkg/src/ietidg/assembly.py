"""Patch-local SIPG systems on the extended spaces (own DOFs + artificial interface copies)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bspline import TensorSplineSpace, eval_basis_many, eval_geometry
from .multipatch import (
    Interface,
    MultiPatch,
    Side,
    edge_eval,
    interface_breakpoints,
    partner_params,
)

DEFAULT_DELTA = 4.0


class DegenerateGeometryError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def quadrature_rule(order: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def element_quadrature(breaks, order):
    """Gauss points of every element; arrays of shape ``(n_el, order)``."""
    x, w = quadrature_rule(order)
    a, b = np.asarray(breaks[:-1]), np.asarray(breaks[1:])
    h = (b - a)[:, None]
    return a[:, None] + h * x[None, :], h * w[None, :]


# ------------------------------------------------------------ DOF bookkeeping

def edge_dofs(space: TensorSplineSpace, side: Side) -> np.ndarray:
    """Tensor indices of the DOFs on an edge, ordered by the tangential index."""
    nu, nv = space.shape
    if side == Side.WEST:
        return np.arange(nv) * nu
    if side == Side.EAST:
        return np.arange(nv) * nu + nu - 1
    if side == Side.SOUTH:
        return np.arange(nu)
    return np.arange(nu) + nu * (nv - 1)


def tangential_kv(space: TensorSplineSpace, side: Side):
    return (space.kv_u, space.kv_v)[side.tangential_dir]


def dirichlet_mask(mp: MultiPatch, k: int) -> np.ndarray:
    space = mp.spaces[k]
    mask = np.zeros(space.dim, bool)
    for kk, side in mp.dirichlet:
        if kk == k:
            mask[edge_dofs(space, side)] = True
    return mask


def boundary_mask(space: TensorSplineSpace) -> np.ndarray:
    """Basis functions not vanishing on the patch boundary (open knot vectors)."""
    i, j = space.unravel(np.arange(space.dim))
    nu, nv = space.shape
    return (i == 0) | (i == nu - 1) | (j == 0) | (j == nv - 1)


def trace_dofs(mp: MultiPatch, iface: Interface) -> tuple[np.ndarray, np.ndarray]:
    """Along-edge and tensor indices of ``iface.l``'s DOFs living on the interface.

    Keeps functions whose support meets ``[a_l, b_l]`` with positive length and
    which are not eliminated by the Dirichlet condition.
    """
    space = mp.spaces[iface.l]
    kv = tangential_kv(space, iface.side_l)
    p = kv.degree
    m = np.arange(kv.dim)
    lo, hi = kv.knots[m], kv.knots[m + p + 1]
    hit = (np.minimum(hi, iface.b_l) - np.maximum(lo, iface.a_l)) > 1e-12
    tensor = edge_dofs(space, iface.side_l)
    keep = hit & ~dirichlet_mask(mp, iface.l)[tensor]
    return m[keep], tensor[keep]


@dataclass(frozen=True, eq=False)
class ArtificialBlock:
    iface_id: int
    iface: Interface          # oriented so that iface.k is the owning patch of the block
    along: np.ndarray         # tangential indices on the neighbor's edge
    owner_dofs: np.ndarray    # neighbor tensor indices
    local: np.ndarray         # positions in the extended local numbering

    @property
    def neighbor(self) -> int:
        return self.iface.l


@dataclass(frozen=True, eq=False)
class ExtendedSpaceIndex:
    """Numbering of V_e on one patch: own non-Dirichlet DOFs, then artificial copies."""

    patch: int
    own: np.ndarray            # tensor index of own local DOF n
    own_lookup: np.ndarray     # tensor index -> local index, -1 if eliminated
    interior: np.ndarray       # local indices of I
    boundary: np.ndarray       # local indices of own DOFs on Gamma
    blocks: tuple[ArtificialBlock, ...]
    size: int

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.boundary] + [b.local for b in self.blocks]).astype(int)

    @property
    def num_artificial(self) -> int:
        return sum(len(b.local) for b in self.blocks)

    def owner(self, local: int) -> tuple[int, int]:
        """(patch, tensor index) of the function represented by a local DOF."""
        if local < len(self.own):
            return self.patch, int(self.own[local])
        for b in self.blocks:
            hit = np.flatnonzero(b.local == local)
            if len(hit):
                return b.neighbor, int(b.owner_dofs[hit[0]])
        raise IndexError(local)


def build_index(mp: MultiPatch, k: int) -> ExtendedSpaceIndex:
    space = mp.spaces[k]
    dmask = dirichlet_mask(mp, k)
    own = np.flatnonzero(~dmask)
    lookup = -np.ones(space.dim, int)
    lookup[own] = np.arange(len(own))
    bmask = boundary_mask(space)[own]
    interior = np.flatnonzero(~bmask)
    boundary = np.flatnonzero(bmask)
    blocks = []
    pos = len(own)
    for n, iface in mp.interfaces_of(k):
        along, tensor = trace_dofs(mp, iface)
        blocks.append(ArtificialBlock(n, iface, along, tensor, np.arange(pos, pos + len(along))))
        pos += len(along)
    return ExtendedSpaceIndex(k, own, lookup, interior, boundary, tuple(blocks), pos)


# ------------------------------------------------------------------ volume

def volume_geometry(G, space: TensorSplineSpace, order_u=None, order_v=None):
    """Quadrature points, weights and metric tensor ``|det J| J^-1 J^-T`` on the tensor Gauss grid.

    Shapes: ``xu (ne_u, nq_u)``, ``K (ne_u*nq_u, ne_v*nq_v, 2, 2)`` etc.
    """
    ku, kv = space.kv_u, space.kv_v
    qu = order_u or ku.degree + 1
    qv = order_v or kv.degree + 1
    xu, wu = element_quadrature(ku.breakpoints, qu)
    xv, wv = element_quadrature(kv.breakpoints, qv)
    U, V = np.meshgrid(xu.ravel(), xv.ravel(), indexing="ij")
    X, J = eval_geometry(G, U.ravel(), V.ravel())
    det = np.linalg.det(J)
    return xu, wu, xv, wv, X.reshape(U.shape + (2,)), J.reshape(U.shape + (2, 2)), \
        det.reshape(U.shape)


def metric_tensor(J, det):
    Jinv = np.linalg.inv(J)
    return np.abs(det)[..., None, None] * Jinv @ np.swapaxes(Jinv, -1, -2)


def assemble_volume(mp: MultiPatch, k: int, f=None, chunk: int = 256):
    """Stiffness and load over all tensor DOFs of patch ``k`` (no elimination).

    Returns ``(K, F)`` with ``K`` a CSR matrix of size ``space.dim``.
    """
    G, space = mp.patches[k], mp.spaces[k]
    ku, kv = space.kv_u, space.kv_v
    pu, pv = ku.degree, kv.degree
    xu, wu, xv, wv, X, J, det = volume_geometry(G, space)
    if np.any(np.abs(det) < 1e-14):
        bad = np.argwhere(np.abs(det) < 1e-14)[0]
        eu, ev = bad[0] // xu.shape[1], bad[1] // xv.shape[1]
        raise DegenerateGeometryError(f"patch {k}: |det DG| < 1e-14 in element ({eu}, {ev})")
    Kmet = metric_tensor(J, det)
    neu, nqu = xu.shape
    nev, nqv = xv.shape
    fu, Nu = eval_basis_many(ku, xu.ravel())
    _, dNu = eval_basis_many(ku, xu.ravel(), 1)
    fv, Nv = eval_basis_many(kv, xv.ravel())
    _, dNv = eval_basis_many(kv, xv.ravel(), 1)
    Nu, dNu = Nu.reshape(neu, nqu, pu + 1), dNu.reshape(neu, nqu, pu + 1)
    Nv, dNv = Nv.reshape(nev, nqv, pv + 1), dNv.reshape(nev, nqv, pv + 1)
    fu, fv = fu.reshape(neu, nqu)[:, 0], fv.reshape(nev, nqv)[:, 0]
    # per-element metric and weights: (neu, nqu, nev, nqv, ...) -> (e, q)
    Kmet = Kmet.reshape(neu, nqu, nev, nqv, 2, 2).transpose(0, 2, 1, 3, 4, 5)
    Kmet = Kmet.reshape(neu * nev, nqu * nqv, 2, 2)
    W = (wu[:, None, :, None] * wv[None, :, None, :]).reshape(neu * nev, nqu * nqv)
    absdet = np.abs(det).reshape(neu, nqu, nev, nqv).transpose(0, 2, 1, 3).reshape(neu * nev, -1)
    fvals = None
    if f is not None:
        Xe = X.reshape(neu, nqu, nev, nqv, 2).transpose(0, 2, 1, 3, 4).reshape(neu * nev, -1, 2)
        fvals = np.asarray(f(Xe[..., 0], Xe[..., 1]), float) * absdet * W
    eu_all, ev_all = np.divmod(np.arange(neu * nev), nev)
    nloc = (pu + 1) * (pv + 1)
    rows, cols, vals = [], [], []
    F = np.zeros(space.dim)
    for start in range(0, neu * nev, chunk):
        sl = slice(start, min(start + chunk, neu * nev))
        eu, ev = eu_all[sl], ev_all[sl]
        # (e, qu, qv, b, a) with local function index a + (pu+1) b
        Gu = dNu[eu][:, :, None, None, :] * Nv[ev][:, None, :, :, None]
        Gv = Nu[eu][:, :, None, None, :] * dNv[ev][:, None, :, :, None]
        Gu = Gu.reshape(len(eu), nqu * nqv, nloc)
        Gv = Gv.reshape(len(eu), nqu * nqv, nloc)
        Km = Kmet[sl] * W[sl][..., None, None]
        P1 = Km[..., 0, 0, None] * Gu + Km[..., 0, 1, None] * Gv
        P2 = Km[..., 1, 0, None] * Gu + Km[..., 1, 1, None] * Gv
        loc = np.swapaxes(Gu, 1, 2) @ P1 + np.swapaxes(Gv, 1, 2) @ P2
        iu = fu[eu][:, None] + np.arange(pu + 1)
        jv = fv[ev][:, None] + np.arange(pv + 1)
        gidx = (iu[:, None, :] + space.kv_u.dim * jv[:, :, None]).reshape(len(eu), nloc)
        rows.append(np.repeat(gidx, nloc, axis=1).ravel())
        cols.append(np.tile(gidx, (1, nloc)).ravel())
        vals.append(loc.ravel())
        if fvals is not None:
            Nloc = (Nu[eu][:, :, None, None, :] * Nv[ev][:, None, :, :, None]).reshape(
                len(eu), nqu * nqv, nloc)
            np.add.at(F, gidx.ravel(), np.einsum("eq,eqa->ea", fvals[sl], Nloc).ravel())
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(space.dim, space.dim))
    K.sum_duplicates()
    return K, F


# --------------------------------------------------------------- interface

def interface_quadrature(mp: MultiPatch, iface: Interface):
    """Gauss points (own edge parameter) and weights on the merged pieces."""
    bps = interface_breakpoints(mp, iface)
    p = max(mp.spaces[iface.k].degree, mp.spaces[iface.l].degree)
    t, w = element_quadrature(bps, p + 1)
    return t.ravel(), w.ravel()


def interface_traces(mp: MultiPatch, iface: Interface, t):
    """Own-side values, normal derivatives and arc-length factors at edge parameters ``t``.

    Returns ``(idx, val, dn, speed)``: tensor indices and values of the
    nonzero own functions, their outward normal derivatives, and ``|dx/dt|``.
    """
    G, space, side = mp.patches[iface.k], mp.spaces[iface.k], iface.side_k
    u, v = side.params(t)
    _, J = eval_geometry(G, u, v)
    idx, val, grad = space.eval(u, v, deriv=True)
    JinvT = np.swapaxes(np.linalg.inv(J), 1, 2)
    normal = JinvT @ side.outward
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    phys = np.einsum("nij,nkj->nki", JinvT, grad)
    dn = np.einsum("nki,ni->nk", phys, normal)
    speed = np.linalg.norm(J[:, :, side.tangential_dir], axis=1)
    return idx, val, dn, speed


def assemble_interface(mp: MultiPatch, k: int, block: ArtificialBlock,
                       index: ExtendedSpaceIndex, delta: float = DEFAULT_DELTA):
    """Consistency (m) and penalty (r) matrices of one interface of patch ``k``.

    Both are returned as CSR matrices on the extended local numbering.
    """
    if delta <= 0:
        raise ConfigError(f"penalty parameter must be positive, got {delta}")
    iface = block.iface
    if iface.h is None:
        raise ValueError("interface mesh size not computed; discretize the multipatch first")
    p = mp.spaces[k].degree
    sigma = delta * p ** 2 / iface.h
    t, w = interface_quadrature(mp, iface)
    idx, val, dn, speed = interface_traces(mp, iface, t)
    ds = w * speed
    own_loc = index.own_lookup[idx]
    s = partner_params(mp, iface, t)
    kv_l = tangential_kv(mp.spaces[iface.l], iface.side_l)
    first, psi = eval_basis_many(kv_l, s)
    along = first[:, None] + np.arange(kv_l.degree + 1)
    art_lookup = -np.ones(kv_l.dim, int)
    art_lookup[block.along] = block.local
    art_loc = art_lookup[along]
    loc = np.concatenate([own_loc, art_loc], axis=1)
    jump = np.concatenate([-val, psi], axis=1)
    flux = np.concatenate([dn, np.zeros_like(psi)], axis=1)
    valid = loc >= 0
    jump = np.where(valid, jump, 0.0)
    flux = np.where(valid, flux, 0.0)
    loc = np.where(valid, loc, 0)
    rows = np.repeat(loc, loc.shape[1], axis=1).ravel()
    cols = np.tile(loc, (1, loc.shape[1])).ravel()
    # averaged flux: each side carries half of the consistency term
    m = 0.5 * ds[:, None, None] * (jump[:, :, None] * flux[:, None, :] + flux[:, :, None] * jump[:, None, :])
    r = sigma * ds[:, None, None] * jump[:, :, None] * jump[:, None, :]
    shape = (index.size, index.size)
    M = sp.csr_matrix((m.ravel(), (rows, cols)), shape=shape)
    R = sp.csr_matrix((r.ravel(), (rows, cols)), shape=shape)
    M.sum_duplicates()
    R.sum_duplicates()
    return M, R


# ------------------------------------------------------------- local system

@dataclass(frozen=True, eq=False)
class LocalSystem:
    """Extended local matrix ``A`` and load ``f`` with the I/Gamma partition."""

    A: sp.csr_matrix
    f: np.ndarray
    index: ExtendedSpaceIndex
    delta: float

    @property
    def I(self) -> np.ndarray:
        return self.index.interior

    @property
    def G(self) -> np.ndarray:
        return self.index.gamma

    def blocks(self):
        A = self.A
        I, G = self.I, self.G
        return A[I][:, I], A[I][:, G], A[G][:, I], A[G][:, G]


def assemble_local(mp: MultiPatch, k: int, f=None, delta: float = DEFAULT_DELTA) -> LocalSystem:
    """a_e = a + m + r on patch ``k`` with homogeneous Dirichlet DOFs removed."""
    if delta <= 0:
        raise ConfigError(f"penalty parameter must be positive, got {delta}")
    index = build_index(mp, k)
    K, F = assemble_volume(mp, k, f)
    own = index.own
    n_own = len(own)
    Kown = K[own][:, own].tocoo()
    A = sp.csr_matrix((Kown.data, (Kown.row, Kown.col)), shape=(index.size, index.size))
    for block in index.blocks:
        M, R = assemble_interface(mp, k, block, index, delta)
        A = A + M + R
    fe = np.zeros(index.size)
    fe[:n_own] = F[own]
    return LocalSystem(A.tocsr(), fe, index, delta)


def dump_triplets(system: LocalSystem, path) -> None:
    """Write ``A`` as ``row col value`` lines after a short header."""
    A = system.A.tocoo()
    with open(path, "w") as fh:
        fh.write("# ietidg.local-system/1\n")
        fh.write(f"# patch {system.index.patch} size {A.shape[0]} nnz {A.nnz} delta {system.delta}\n")
        fh.write("# interior " + " ".join(map(str, system.I)) + "\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17g}\n")


# ---------------------------------------------------------- post-processing

def evaluate(mp: MultiPatch, k: int, coeffs: np.ndarray, u, v):
    """Values of the patch-``k`` spline with full tensor coefficient vector ``coeffs``."""
    idx, val = mp.spaces[k].eval(np.asarray(u, float), np.asarray(v, float))
    return np.sum(coeffs[idx] * val, axis=1)


def l2_error(mp: MultiPatch, coeffs, exact, extra: int = 2) -> float:
    """L2 distance between a multi-patch spline and ``exact(x, y)``."""
    total = 0.0
    for k in range(mp.num_patches):
        space = mp.spaces[k]
        xu, wu, xv, wv, X, J, det = volume_geometry(
            mp.patches[k], space, space.kv_u.degree + 1 + extra, space.kv_v.degree + 1 + extra)
        U, V = np.meshgrid(xu.ravel(), xv.ravel(), indexing="ij")
        uh = evaluate(mp, k, coeffs[k], U.ravel(), V.ravel()).reshape(U.shape)
        ex = exact(X[..., 0], X[..., 1])
        W = np.outer(wu.ravel(), wv.ravel())
        total += float(np.sum((uh - ex) ** 2 * np.abs(det) * W))
    return float(np.sqrt(total))
