"""Dual-primal tearing and interconnecting solver with fat-vertex primal DOFs.

Skeleton DOFs are the Gamma-DOFs of all patches: own boundary functions and
artificial copies of neighbor traces. A neighbor boundary function and its
copies form one equivalence class. Classes of functions that do not vanish
at a junction are primal (one coarse DOF per class); all others are dual
and glued by the jump matrix ``B`` (owner minus copy, one row per copy).
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import (
    DEFAULT_DELTA,
    ExtendedSpaceIndex,
    LocalSystem,
    assemble_local,
    build_index,
    dirichlet_mask,
    edge_dofs,
    tangential_kv,
)
from .bspline import eval_basis_many
from .localsolve import CoercivityError, interior_solver
from .multipatch import MultiPatch

log = logging.getLogger(__name__)

NONZERO_TOL = 1e-12


class ClassificationError(ValueError):
    pass


class CoarseSpaceError(np.linalg.LinAlgError):
    pass


class IndefiniteOperatorError(ArithmeticError):
    pass


# --------------------------------------------------------------- DOF table

@dataclass(frozen=True, eq=False)
class SkeletonDofTable:
    patch: np.ndarray          # patch of each skeleton DOF
    gamma_pos: np.ndarray      # position within the patch's Gamma numbering
    offsets: np.ndarray        # start of each patch's block, length K+1
    cls: np.ndarray            # class of each skeleton DOF
    class_owner: np.ndarray    # skeleton DOF that owns each class
    class_key: tuple           # (patch, tensor index) of each class's function
    multiplicity: np.ndarray   # per class
    primal: np.ndarray         # per class

    @property
    def size(self) -> int:
        return len(self.patch)

    @property
    def num_classes(self) -> int:
        return len(self.class_owner)

    def dof_multiplicity(self) -> np.ndarray:
        return self.multiplicity[self.cls]

    def dof_primal(self) -> np.ndarray:
        return self.primal[self.cls]

    def patch_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])


def junction_functions(mp: MultiPatch, fat_vertices: bool = True) -> set[tuple[int, int]]:
    """(patch, tensor index) of boundary functions not vanishing at a junction.

    With ``fat_vertices=False`` a T-junction contributes only the functions of
    patches that have a corner there (used to demonstrate that the fat vertex
    is needed).
    """
    keys = set()
    for junc in mp.junctions:
        for patch, side, t in junc.incidences:
            if not fat_vertices and junc.kind == "t-junction" and 1e-9 < t < 1 - 1e-9:
                continue
            space = mp.spaces[patch]
            kv = tangential_kv(space, side)
            first, vals = eval_basis_many(kv, [t])
            along = first[0] + np.flatnonzero(np.abs(vals[0]) > NONZERO_TOL)
            tensor = edge_dofs(space, side)[along]
            dmask = dirichlet_mask(mp, patch)
            keys.update((patch, int(g)) for g in tensor if not dmask[g])
    return keys


def classify_dofs(mp: MultiPatch, indices: list[ExtendedSpaceIndex],
                  fat_vertices: bool = True) -> SkeletonDofTable:
    patch, gpos, keys, is_owner = [], [], [], []
    offsets = [0]
    for k, idx in enumerate(indices):
        gamma = idx.gamma
        nb = len(idx.boundary)
        for n, loc in enumerate(gamma):
            patch.append(k)
            gpos.append(n)
            if n < nb:
                keys.append((k, int(idx.own[loc])))
                is_owner.append(True)
            else:
                keys.append(idx.owner(int(loc)))
                is_owner.append(False)
        offsets.append(len(patch))
    class_of: dict[tuple[int, int], int] = {}
    owners: list[int] = []
    for n, (key, own) in enumerate(zip(keys, is_owner)):
        if own:
            class_of[key] = len(owners)
            owners.append(n)
    cls = np.empty(len(keys), int)
    for n, key in enumerate(keys):
        if key not in class_of:
            raise ClassificationError(f"artificial DOF {key} has no owning boundary DOF")
        cls[n] = class_of[key]
    mult = np.bincount(cls, minlength=len(owners))
    primal_keys = junction_functions(mp, fat_vertices)
    class_key = tuple(keys[o] for o in owners)
    primal = np.array([key in primal_keys for key in class_key], bool)
    lonely = np.flatnonzero(mult < 2)
    if len(lonely):
        key = class_key[lonely[0]]
        kind = "primal" if primal[lonely[0]] else "dual"
        raise ClassificationError(
            f"{kind} class of patch {key[0]} function {key[1]} touches no interface")
    return SkeletonDofTable(np.array(patch, int), np.array(gpos, int), np.array(offsets, int),
                            cls, np.array(owners, int), class_key, mult, primal)


# ----------------------------------------------------------- local Schur

@dataclass(eq=False)
class LocalSchur:
    S: np.ndarray
    g: np.ndarray
    system: LocalSystem
    solver: object

    def recover_interior(self, w_gamma: np.ndarray) -> np.ndarray:
        A_IG = self.system.A[self.system.I][:, self.system.G]
        rhs = self.system.f[self.system.I] - A_IG @ w_gamma
        return self.solver.solve(rhs)


def schur_local(system: LocalSystem, G=None, space=None, method: str = "auto") -> LocalSchur:
    """S = A_GG - A_GI A_II^{-1} A_IG and g = f_G - A_GI A_II^{-1} f_I."""
    _, A_IG, _, A_GG = system.blocks()
    solver = interior_solver(system, G, space, method)
    corr, gcorr = solver.schur_correction(A_IG.tocsc(), system.f[system.I])
    S = A_GG.toarray() - corr
    S = 0.5 * (S + S.T)
    g = system.f[system.G] - gcorr
    return LocalSchur(S, g, system, solver)


# ------------------------------------------------------------- operators

@dataclass(eq=False)
class PatchPrimal:
    rem: np.ndarray            # Gamma positions of non-primal DOFs
    prim: np.ndarray           # Gamma positions of primal DOFs
    coarse: np.ndarray         # coarse index of each primal DOF
    chol: tuple                # Cholesky of S_rr
    Psi: np.ndarray            # |Gamma| x |prim|


@dataclass(eq=False)
class IetiOperators:
    table: SkeletonDofTable
    schurs: list[LocalSchur]
    B: sp.csr_matrix
    D: np.ndarray
    local: list[PatchPrimal]
    coarse_matrix: np.ndarray
    coarse_chol: tuple | None
    g: np.ndarray

    @property
    def num_multipliers(self) -> int:
        return self.B.shape[0]

    @property
    def num_primal(self) -> int:
        return self.coarse_matrix.shape[0]

    def C(self, k: int) -> np.ndarray:
        """Constraint matrix of patch ``k``: rows select its primal Gamma DOFs."""
        n = len(self.schurs[k].g)
        Ck = np.zeros((len(self.local[k].prim), n))
        Ck[np.arange(len(self.local[k].prim)), self.local[k].prim] = 1.0
        return Ck

    def Psi(self) -> np.ndarray:
        """Global energy-minimizing coarse basis, skeleton x coarse."""
        out = np.zeros((self.table.size, self.num_primal))
        for k, lp in enumerate(self.local):
            rows = np.arange(self.table.offsets[k], self.table.offsets[k + 1])
            out[np.ix_(rows, lp.coarse)] = lp.Psi
        return out

    def _delta_solve(self, y: np.ndarray) -> np.ndarray:
        """Local solves with primal DOFs fixed to zero."""
        out = np.zeros_like(y)
        for k, lp in enumerate(self.local):
            if len(lp.rem):
                rows = self.table.offsets[k] + lp.rem
                out[rows] = sla.cho_solve(lp.chol, y[rows])
        return out

    def _coarse_restrict(self, y: np.ndarray) -> np.ndarray:
        c = np.zeros(self.num_primal)
        for k, lp in enumerate(self.local):
            if len(lp.coarse):
                np.add.at(c, lp.coarse, lp.Psi.T @ y[self.table.patch_slice(k)])
        return c

    def _coarse_extend(self, c: np.ndarray) -> np.ndarray:
        out = np.zeros(self.table.size)
        for k, lp in enumerate(self.local):
            if len(lp.coarse):
                out[self.table.patch_slice(k)] = lp.Psi @ c[lp.coarse]
        return out

    def _coarse_solve(self, c: np.ndarray) -> np.ndarray:
        if self.num_primal == 0:
            return c
        return sla.cho_solve(self.coarse_chol, c)

    def tilde_solve(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(w_delta, w_pi)`` for the partially assembled system with rhs ``y``."""
        w_pi = self._coarse_solve(self._coarse_restrict(y))
        return self._delta_solve(y), w_pi

    def apply_F(self, lam: np.ndarray) -> np.ndarray:
        y = self.B.T @ lam
        w_delta, w_pi = self.tilde_solve(y)
        return self.B @ (w_delta + self._coarse_extend(w_pi))

    def compute_d(self) -> np.ndarray:
        w_delta, w_pi = self.tilde_solve(self.g)
        return self.B @ (w_delta + self._coarse_extend(w_pi))

    def apply_S(self, w: np.ndarray) -> np.ndarray:
        out = np.empty_like(w)
        for k, sch in enumerate(self.schurs):
            sl = self.table.patch_slice(k)
            out[sl] = sch.S @ w[sl]
        return out

    def apply_MsD(self, lam: np.ndarray) -> np.ndarray:
        """Scaled Dirichlet preconditioner B D^-1 S D^-1 B^T."""
        y = (self.B.T @ lam) / self.D
        return self.B @ (self.apply_S(y) / self.D)

    def skeleton_solution(self, lam: np.ndarray) -> np.ndarray:
        """w = w_delta + Psi w_pi for given multipliers."""
        w_delta, w_pi = self.tilde_solve(self.g - self.B.T @ lam)
        return w_delta + self._coarse_extend(w_pi)


def build_operators(table: SkeletonDofTable, schurs: list[LocalSchur]) -> IetiOperators:
    rows, cols, vals = [], [], []
    owner_of_dof = table.class_owner[table.cls]
    dual_copies = np.flatnonzero(~table.dof_primal() & (owner_of_dof != np.arange(table.size)))
    for r, n in enumerate(dual_copies):
        rows += [r, r]
        cols += [int(owner_of_dof[n]), int(n)]
        vals += [1.0, -1.0]
    B = sp.csr_matrix((vals, (rows, cols)), shape=(len(dual_copies), table.size))
    D = table.dof_multiplicity().astype(float)
    primal_classes = np.flatnonzero(table.primal)
    coarse_id = -np.ones(table.num_classes, int)
    coarse_id[primal_classes] = np.arange(len(primal_classes))
    local = []
    SPP = np.zeros((len(primal_classes), len(primal_classes)))
    for k, sch in enumerate(schurs):
        sl = table.patch_slice(k)
        pflag = table.dof_primal()[sl]
        prim = np.flatnonzero(pflag)
        rem = np.flatnonzero(~pflag)
        S = sch.S
        chol = None
        if len(rem):
            try:
                chol = sla.cho_factor(S[np.ix_(rem, rem)], lower=True)
            except np.linalg.LinAlgError as exc:
                raise CoercivityError(
                    f"patch {k}: constrained Schur complement is singular "
                    f"({len(prim)} primal constraints); penalty too small or primal space too thin"
                ) from exc
        Psi = np.zeros((len(S), len(prim)))
        Psi[prim, np.arange(len(prim))] = 1.0
        if len(rem) and len(prim):
            Psi[rem] = -sla.cho_solve(chol, S[np.ix_(rem, prim)])
        coarse = coarse_id[table.cls[sl][prim]]
        if len(prim):
            np.add.at(SPP, (coarse[:, None], coarse[None, :]), Psi.T @ S @ Psi)
        local.append(PatchPrimal(rem, prim, coarse, chol, Psi))
    coarse_chol = None
    if len(primal_classes):
        SPP = 0.5 * (SPP + SPP.T)
        try:
            coarse_chol = sla.cho_factor(SPP, lower=True)
        except np.linalg.LinAlgError as exc:
            raise CoarseSpaceError("coarse matrix Psi^T S Psi is not positive definite") from exc
    g = np.concatenate([sch.g for sch in schurs]) if schurs else np.zeros(0)
    return IetiOperators(table, schurs, B, D, local, SPP, coarse_chol, g)


# ------------------------------------------------------------------- PCG

@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    kappa: float
    lambda_min: float
    lambda_max: float
    residuals: list[float]
    alphas: list[float] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)


def lanczos_tridiagonal(alphas, betas) -> np.ndarray:
    """Tridiagonal Lanczos matrix from CG step lengths and direction updates."""
    m = len(alphas)
    T = np.zeros((m, m))
    for j in range(m):
        T[j, j] = 1.0 / alphas[j] + (betas[j - 1] / alphas[j - 1] if j > 0 else 0.0)
        if j + 1 < m:
            T[j, j + 1] = T[j + 1, j] = np.sqrt(max(betas[j], 0.0)) / alphas[j]
    return T


def solve_pcg(apply_A, apply_M, b, rtol: float = 1e-8, maxit: int = 1000) -> PCGResult:
    """Preconditioned CG from the zero vector with a Lanczos condition estimate.

    Stops when the preconditioned residual norm ``sqrt(r.z)`` has dropped by
    ``rtol`` relative to the initial one.
    """
    if not 0 < rtol < 1:
        raise ValueError("rtol must lie in (0, 1)")
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_M(r)
    rz = float(r @ z)
    rz0 = rz
    residuals = [1.0]
    alphas, betas = [], []
    converged = rz0 <= 0.0
    if converged:
        residuals = [0.0]
    p = z.copy()
    it = 0
    while not converged and it < maxit:
        q = apply_A(p)
        pq = float(p @ q)
        if pq <= 0.0:
            raise IndefiniteOperatorError(f"non-positive curvature p.Fp = {pq:.3g} at iteration {it}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = apply_M(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        it += 1
        res = np.sqrt(max(rz_new, 0.0) / rz0)
        residuals.append(float(res))
        if res <= rtol:
            converged = True
            break
        p = z + beta * p
        rz = rz_new
    if alphas:
        ev = np.linalg.eigvalsh(lanczos_tridiagonal(alphas, betas))
        lmin, lmax = float(ev[0]), float(ev[-1])
        kappa = lmax / lmin
    else:
        lmin = lmax = kappa = float("nan")
    if not converged:
        log.warning("PCG did not converge in %d iterations (residual %.3g)", maxit, residuals[-1])
    return PCGResult(x, it, converged, kappa, lmin, lmax, residuals, alphas, betas)


# ---------------------------------------------------------------- driver

@dataclass
class SolveReport:
    lam: np.ndarray
    coefficients: list[np.ndarray]
    iterations: int
    kappa: float
    converged: bool
    residuals: list[float]
    timings: dict
    sizes: dict
    config: dict

    def to_record(self) -> dict:
        return {
            "schema": "ietidg.solve-report/1",
            "iterations": self.iterations,
            "kappa": self.kappa,
            "converged": self.converged,
            "residuals": self.residuals,
            "timings": self.timings,
            "sizes": self.sizes,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


class IetiDPSolver:
    """Set up local systems, Schur complements and the dual operators for one discretization."""

    def __init__(self, mp: MultiPatch, f=None, delta: float = DEFAULT_DELTA, threads: int = 1,
                 method: str = "auto", fat_vertices: bool = True):
        if mp.spaces is None:
            raise ValueError("multipatch has no discretization attached")
        self.mp = mp
        self.f = f
        self.delta = delta
        self.threads = threads
        self.method = method
        self.timings: dict[str, float] = {}
        t0 = time.perf_counter()
        K = mp.num_patches
        self.systems = _pmap(lambda k: assemble_local(mp, k, f, delta), range(K), threads)
        t1 = time.perf_counter()
        self.schurs = _pmap(lambda k: schur_local(self.systems[k], mp.patches[k], mp.spaces[k],
                                                  method), range(K), threads)
        t2 = time.perf_counter()
        self.table = classify_dofs(mp, [s.index for s in self.systems], fat_vertices)
        self.ops = build_operators(self.table, self.schurs)
        t3 = time.perf_counter()
        self.timings.update(assembly=t1 - t0, schur=t2 - t1, operators=t3 - t2)

    @property
    def sizes(self) -> dict:
        return {
            "patches": self.mp.num_patches,
            "dofs": int(sum(len(s.index.own) for s in self.systems)),
            "skeleton": self.table.size,
            "multipliers": self.ops.num_multipliers,
            "primal": self.ops.num_primal,
        }

    def solve(self, rtol: float = 1e-8, maxit: int = 1000) -> SolveReport:
        t0 = time.perf_counter()
        d = self.ops.compute_d()
        res = solve_pcg(self.ops.apply_F, self.ops.apply_MsD, d, rtol, maxit)
        t1 = time.perf_counter()
        coeffs = recover_solution(self, res.x)
        self.timings.update(pcg=t1 - t0, recovery=time.perf_counter() - t1)
        return SolveReport(res.x, coeffs, res.iterations, res.kappa, res.converged,
                           res.residuals, dict(self.timings), self.sizes,
                           {"delta": self.delta, "rtol": rtol, "maxit": maxit,
                            "threads": self.threads})


def recover_solution(solver: IetiDPSolver, lam: np.ndarray) -> list[np.ndarray]:
    """Full tensor coefficient vectors per patch (zeros on Dirichlet DOFs)."""
    w = solver.ops.skeleton_solution(lam)
    out = []
    for k, (sys_k, sch) in enumerate(zip(solver.systems, solver.schurs)):
        wk = w[solver.table.patch_slice(k)]
        local = np.zeros(sys_k.index.size)
        local[sys_k.G] = wk
        local[sys_k.I] = sch.recover_interior(wk)
        full = np.zeros(solver.mp.spaces[k].dim)
        full[sys_k.index.own] = local[:len(sys_k.index.own)]
        out.append(full)
    return out


def solve(mp: MultiPatch, f, delta: float = DEFAULT_DELTA, rtol: float = 1e-8,
          maxit: int = 1000, threads: int = 1) -> SolveReport:
    return IetiDPSolver(mp, f, delta, threads).solve(rtol, maxit)
