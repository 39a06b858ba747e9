import json
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from ietidg.assembly import assemble_local, build_index
from ietidg.bspline import rectangle
from ietidg.ietidp import (
    ClassificationError,
    CoarseSpaceError,
    IetiDPSolver,
    IndefiniteOperatorError,
    classify_dofs,
    junction_functions,
    schur_local,
    solve_pcg,
)
from ietidg.localsolve import CoercivityError
from ietidg.multipatch import (
    GRID2X2_SPLITS,
    build_multipatch,
    build_square_tgrid,
    mini_ring,
)
from ietidg.oracle import (
    cox_de_boor,
    dense_kappa,
    dense_matrix,
    dense_spectrum,
    saddle_dual_operator,
    solve_direct,
)

EXP = lambda x, y: np.exp(x + 2 * y)


@lru_cache(maxsize=None)
def tee_solver(p=2, r=2, delta=4.0):
    return IetiDPSolver(build_square_tgrid().discretize(p, r, p - 1), EXP, delta)


def grid_solver(p=2, r=2):
    return IetiDPSolver(build_square_tgrid(GRID2X2_SPLITS).discretize(p, r, p - 1), EXP)


# ------------------------------------------------------- classification

def test_grid_corner_gives_one_primal_class_per_patch():
    solver = grid_solver()
    t = solver.table
    owners = t.patch[t.class_owner[t.primal]]
    assert sorted(owners.tolist()) == [0, 1, 2, 3]
    assert solver.ops.num_primal == 4
    # own corner function plus the copies from the two edge neighbors
    assert [len(lp.prim) for lp in solver.ops.local] == [3, 3, 3, 3]


def brute_force_junction_functions(mp, point, k):
    """Tensor indices of patch-k functions nonzero at a physical point on its boundary."""
    G = mp.patches[k]
    x0, y0 = G.control_points.min(axis=0)
    x1, y1 = G.control_points.max(axis=0)
    u, v = (point[0] - x0) / (x1 - x0), (point[1] - y0) / (y1 - y0)
    space = mp.spaces[k]
    Bu = cox_de_boor(space.kv_u.knots, space.kv_u.degree, [u])[0]
    Bv = cox_de_boor(space.kv_v.knots, space.kv_v.degree, [v])[0]
    vals = np.outer(Bv, Bu).ravel()
    return set(np.flatnonzero(np.abs(vals) > 1e-12).tolist())


@pytest.mark.parametrize("p", [2, 3, 4, 5, 6, 7])
def test_tee_fat_vertex_matches_brute_force(p):
    mp = build_square_tgrid().discretize(p, 2, p - 1)
    (junc,) = mp.junctions
    assert junc.kind == "t-junction"
    keys = junction_functions(mp)
    for k in range(mp.num_patches):
        oracle = brute_force_junction_functions(mp, junc.point, k)
        assert {g for kk, g in keys if kk == k} == oracle
    # the T-point at x = 0.4 is not a knot: p + 1 trace functions of the top patch
    assert len({g for kk, g in keys if kk == 2}) == p + 1
    assert len(keys) == p + 3


def test_classes_are_consistent():
    solver = tee_solver()
    t = solver.table
    keys = [None] * t.size
    for k, system in enumerate(solver.systems):
        idx = system.index
        for n, loc in enumerate(idx.gamma):
            keys[t.offsets[k] + n] = idx.owner(int(loc))
    for n in range(t.size):
        assert keys[n] == t.class_key[t.cls[n]]
    for c in range(t.num_classes):
        members = np.flatnonzero(t.cls == c)
        assert len(set(t.patch[members].tolist())) == len(members) == t.multiplicity[c]
        assert t.patch[t.class_owner[c]] == t.class_key[c][0]


def test_unmatched_boundary_function_is_rejected():
    mp = build_square_tgrid().discretize(2, 1, 1)
    indices = [build_index(mp, k) for k in range(mp.num_patches)]
    indices[2] = replace(indices[2], blocks=())
    with pytest.raises(ClassificationError):
        classify_dofs(mp, indices)


# ---------------------------------------------------------- Schur complement

@pytest.mark.parametrize("method", ["auto", "dense", "sparse"])
def test_schur_complement_matches_dense_elimination(method):
    mp = build_square_tgrid().discretize(3, 2, 2)
    for k in range(mp.num_patches):
        system = assemble_local(mp, k, EXP)
        sch = schur_local(system, mp.patches[k], mp.spaces[k], method)
        A = system.A.toarray()
        I, G = system.I, system.G
        X = np.linalg.solve(A[np.ix_(I, I)], A[np.ix_(I, G)])
        S = A[np.ix_(G, G)] - A[np.ix_(G, I)] @ X
        np.testing.assert_allclose(sch.S, S, atol=1e-10 * np.max(np.abs(S)))
        g = system.f[G] - X.T @ system.f[I]
        np.testing.assert_allclose(sch.g, g, atol=1e-10 * np.max(np.abs(g)))


def test_schur_energy_is_minimal_extension():
    solver = tee_solver()
    rng = np.random.default_rng(0)
    for sch in solver.schurs:
        A = sch.system.A.toarray()
        I, G = sch.system.I, sch.system.G
        wG = rng.standard_normal(len(G))
        wI = np.linalg.solve(A[np.ix_(I, I)], -A[np.ix_(I, G)] @ wG)
        w = np.zeros(len(A))
        w[G], w[I] = wG, wI
        assert wG @ sch.S @ wG == pytest.approx(w @ A @ w, rel=1e-10)
        for _ in range(5):
            other = w.copy()
            other[I] += 1e-3 * rng.standard_normal(len(I))
            assert other @ A @ other > w @ A @ w


def test_schur_symmetric_positive_semidefinite():
    for solver in (tee_solver(), grid_solver()):
        for sch in solver.schurs:
            np.testing.assert_array_equal(sch.S, sch.S.T)
            ev = np.linalg.eigvalsh(sch.S)
            scale = ev[-1]
            assert ev[0] > -1e-10 * scale
            assert np.sum(ev < 1e-10 * scale) <= 1


# ------------------------------------------------------------ operators

@pytest.mark.parametrize("make", [tee_solver, grid_solver, lambda: IetiDPSolver(
    mini_ring().discretize(2, 2, 1), EXP)])
def test_primal_basis(make):
    ops = make().ops
    for k, lp in enumerate(ops.local):
        np.testing.assert_array_equal(ops.C(k) @ lp.Psi, np.eye(len(lp.prim)))
        resid = ops.schurs[k].S @ lp.Psi
        assert np.max(np.abs(resid[lp.rem])) < 1e-10 * max(1.0, np.max(np.abs(ops.schurs[k].S)))


def test_jump_matrix_structure():
    solver = tee_solver()
    t, B = solver.table, solver.ops.B.toarray()
    assert np.all(np.sort(B, axis=1)[:, [0, -1]] == [-1.0, 1.0])
    assert np.all(np.count_nonzero(B, axis=1) == 2)
    dual = ~t.primal
    assert B.shape[0] == int(np.sum(t.multiplicity[dual] - 1))
    rng = np.random.default_rng(1)
    c = rng.standard_normal(t.num_classes)
    assert np.max(np.abs(B @ c[t.cls])) < 1e-14
    assert not np.any(B[:, t.dof_primal()])


def test_multiplicity_scaling():
    D = tee_solver().ops.D
    assert np.all(D >= 1) and np.all(D == np.round(D))
    np.testing.assert_array_equal(D, tee_solver().table.dof_multiplicity())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_F_and_preconditioner_symmetric_psd(seed):
    ops = tee_solver(2, 3).ops
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, ops.num_multipliers))
    for apply in (ops.apply_F, ops.apply_MsD):
        ax, ay = apply(x), apply(y)
        assert abs(x @ ay - y @ ax) < 1e-10 * np.linalg.norm(ax) * np.linalg.norm(y)
        assert x @ ax >= -1e-12 * np.linalg.norm(ax) * np.linalg.norm(x)


@pytest.mark.parametrize("mesh", ["tee", "grid", "mini-ring"])
def test_F_matches_saddle_point_elimination(mesh):
    solver = {"tee": lambda: tee_solver(2, 2), "grid": grid_solver,
              "mini-ring": lambda: IetiDPSolver(mini_ring().discretize(2, 2, 1), EXP)}[mesh]()
    ops = solver.ops
    F_ref, d_ref = saddle_dual_operator(
        [s.S for s in ops.schurs], [ops.C(k) for k in range(len(ops.schurs))],
        [lp.coarse for lp in ops.local], ops.B, ops.g)
    F = dense_matrix(ops.apply_F, ops.num_multipliers)
    assert np.max(np.abs(F - F_ref)) < 1e-9 * np.max(np.abs(F_ref))
    assert np.max(np.abs(ops.compute_d() - d_ref)) < 1e-9 * np.max(np.abs(d_ref))


def test_preconditioner_matches_dense_formula():
    ops = tee_solver().ops
    B = ops.B.toarray()
    S = sla.block_diag(*[s.S for s in ops.schurs])
    Dinv = np.diag(1.0 / ops.D)
    M_ref = B @ Dinv @ S @ Dinv @ B.T
    M = dense_matrix(ops.apply_MsD, ops.num_multipliers)
    np.testing.assert_allclose(M, M_ref, atol=1e-12 * np.max(np.abs(M_ref)))


# ------------------------------------------------------------------ PCG

def test_pcg_exact_preconditioner_one_iteration():
    rng = np.random.default_rng(2)
    Q = rng.standard_normal((30, 30))
    A = Q @ Q.T + 30 * np.eye(30)
    Ainv = np.linalg.inv(A)
    res = solve_pcg(lambda x: A @ x, lambda x: Ainv @ x, rng.standard_normal(30), rtol=1e-10)
    assert res.iterations == 1 and res.converged
    assert res.kappa == pytest.approx(1.0, abs=1e-10)


def test_pcg_identity():
    res = solve_pcg(lambda x: x, lambda x: x, np.ones(7))
    assert res.iterations == 1
    assert res.kappa == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(res.x, 1.0)


def test_pcg_rejects_indefinite_operator():
    A = np.diag([1.0, -2.0])
    with pytest.raises(IndefiniteOperatorError):
        solve_pcg(lambda x: A @ x, lambda x: x, np.ones(2))


def test_pcg_reports_non_convergence():
    A = np.diag(np.arange(1.0, 51.0))
    res = solve_pcg(lambda x: A @ x, lambda x: x, np.ones(50), rtol=1e-12, maxit=3)
    assert not res.converged and res.iterations == 3
    assert res.residuals[-1] > 1e-12


@pytest.mark.parametrize("rtol", [0.0, 1.0, -1e-3])
def test_pcg_rejects_bad_tolerance(rtol):
    with pytest.raises(ValueError):
        solve_pcg(lambda x: x, lambda x: x, np.ones(3), rtol=rtol)


def test_pcg_matches_dense_solution():
    rng = np.random.default_rng(3)
    Q = rng.standard_normal((40, 40))
    A = Q @ Q.T + np.eye(40)
    b = rng.standard_normal(40)
    res = solve_pcg(lambda x: A @ x, lambda x: x / np.diag(A), b, rtol=1e-12, maxit=500)
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), rtol=1e-8)
    ev = np.linalg.eigvalsh(A / np.sqrt(np.outer(np.diag(A), np.diag(A))))
    assert res.kappa == pytest.approx(ev[-1] / ev[0], rel=1e-6)


@pytest.mark.parametrize("r", [2, 3, 4])
def test_lanczos_estimate_matches_dense_spectrum(r):
    ops = tee_solver(2, r).ops
    res = solve_pcg(ops.apply_F, ops.apply_MsD, ops.compute_d(), rtol=1e-12)
    ev = dense_spectrum(ops.apply_F, ops.apply_MsD, ops.num_multipliers)
    assert ev[0] >= 1 - 1e-6
    assert abs(res.kappa - dense_kappa(ev)) / dense_kappa(ev) < 0.05


# ------------------------------------------------------------- recovery

@pytest.mark.parametrize("p,r", [(2, 2), (3, 3)])
def test_recovery_matches_monolithic(p, r):
    mp = build_square_tgrid().discretize(p, r, p - 1)
    solver = IetiDPSolver(mp, EXP)
    rep = solver.solve(rtol=1e-10)
    ref, _ = solve_direct(mp, EXP)
    num = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(rep.coefficients, ref)))
    den = np.sqrt(sum(np.sum(b ** 2) for b in ref))
    assert num / den < 1e-8
    w = solver.ops.skeleton_solution(rep.lam)
    assert np.max(np.abs(solver.ops.B @ w)) < 1e-8


def test_single_patch_reduces_to_plain_solve():
    mp = build_multipatch([rectangle(0, 0, 1, 1)]).discretize(3, 3, 2)
    rep = IetiDPSolver(mp, EXP).solve()
    system = assemble_local(mp, 0, EXP)
    x = np.linalg.solve(system.A.toarray(), system.f)
    c = np.zeros(mp.spaces[0].dim)
    c[system.index.own] = x
    np.testing.assert_allclose(rep.coefficients[0], c, atol=1e-13 * np.max(np.abs(c)))
    assert rep.iterations == 0 and rep.converged


def test_fat_vertex_is_needed():
    mp = build_square_tgrid().discretize(2, 3, 1)
    base = IetiDPSolver(mp, EXP)
    ev = dense_spectrum(base.ops.apply_F, base.ops.apply_MsD, base.ops.num_multipliers)
    kappa = dense_kappa(ev)
    try:
        thin = IetiDPSolver(mp, EXP, fat_vertices=False)
    except (CoarseSpaceError, CoercivityError):
        return
    ev_thin = dense_spectrum(thin.ops.apply_F, thin.ops.apply_MsD, thin.ops.num_multipliers)
    assert dense_kappa(ev_thin) > 10 * kappa


def test_threads_are_deterministic():
    mp = build_square_tgrid().discretize(3, 3, 2)
    a = IetiDPSolver(mp, EXP, threads=1).solve(1e-10)
    b = IetiDPSolver(mp, EXP, threads=2).solve(1e-10)
    np.testing.assert_array_equal(a.lam, b.lam)
    for x, y in zip(a.coefficients, b.coefficients):
        np.testing.assert_array_equal(x, y)
    assert a.iterations == b.iterations and a.kappa == b.kappa


def test_solve_report_json():
    rep = tee_solver().solve(1e-8)
    data = json.loads(rep.to_json())
    assert data["schema"] == "ietidg.solve-report/1"
    assert data["iterations"] == rep.iterations == len(data["residuals"]) - 1
    assert data["sizes"]["patches"] == 3
    assert data["config"]["rtol"] == 1e-8
