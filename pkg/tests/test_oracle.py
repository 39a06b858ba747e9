import numpy as np
import pytest
import scipy.sparse as sp

from ietidg.assembly import assemble_local
from ietidg.bspline import annular_sector, basis_matrix, rectangle
from ietidg.ietidp import IetiDPSolver
from ietidg.multipatch import TEE_SPLITS, build_multipatch, build_square_tgrid, mini_ring
from ietidg.oracle import (
    assemble_monolithic,
    cox_de_boor,
    dense_kappa,
    dense_spectrum,
    saddle_coarse_basis,
    solve_direct,
)

EXP = lambda x, y: np.exp(x + 2 * y)
BUBBLE = lambda x, y: x * (1 - x) * y * (1 - y)
BUBBLE_LOAD = lambda x, y: 2 * (x * (1 - x) + y * (1 - y))


def bubble_interpolant(mp):
    """Exact coefficients of x(1-x) y(1-y) on axis-aligned rectangular patches."""
    out = []
    for G, space in zip(mp.patches, mp.spaces):
        (x0, y0), (x1, y1) = G.control_points.min(axis=0), G.control_points.max(axis=0)
        cu = []
        for kv, a, b in ((space.kv_u, x0, x1), (space.kv_v, y0, y1)):
            g = kv.greville()
            x = a + (b - a) * g
            cu.append(np.linalg.solve(basis_matrix(kv, g), x * (1 - x)))
        out.append(np.outer(cu[1], cu[0]).ravel())
    return out


def test_cox_de_boor_partition_of_unity():
    knots = [0, 0, 0, 0.3, 0.3, 0.7, 1, 1, 1]
    x = np.linspace(0, 1, 101)
    N = cox_de_boor(knots, 2, x)
    np.testing.assert_allclose(N.sum(axis=1), 1.0, atol=1e-14)


@pytest.mark.parametrize("G", [rectangle(0, 0, 1, 1), annular_sector(1.0, 2.0, 0.1, 1.2)])
def test_single_patch_matches_local_assembly(G):
    mp = build_multipatch([G]).discretize(3, 2, 1)
    mono = assemble_monolithic(mp, EXP)
    local = assemble_local(mp, 0, EXP)
    A = local.A.toarray()
    assert np.max(np.abs(mono.A - A)) < 1e-13 * np.max(np.abs(A))
    assert np.max(np.abs(mono.f - local.f)) < 1e-13 * np.max(np.abs(local.f))


def global_map(mp, system, dofs):
    """Rows: extended local DOFs; columns: monolithic DOFs."""
    idx = system.index
    cols = [dofs[k][t] for k, t in (idx.owner(n) for n in range(idx.size))]
    return sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), cols)),
                         shape=(idx.size, len(np.concatenate(dofs)[np.concatenate(dofs) >= 0])))


@pytest.mark.parametrize("mp", [build_square_tgrid().discretize(2, 2, 1),
                                mini_ring().discretize(2, 1, 1)])
def test_monolithic_is_sum_of_local_matrices(mp):
    mono = assemble_monolithic(mp, EXP)
    total = np.zeros_like(mono.A)
    F = np.zeros_like(mono.f)
    for k in range(mp.num_patches):
        system = assemble_local(mp, k, EXP)
        P = global_map(mp, system, mono.dofs)
        total += (P.T @ system.A @ P).toarray()
        n_own = len(system.index.own)
        F += P[:n_own].T @ system.f[:n_own]
    scale = np.max(np.abs(mono.A))
    assert np.max(np.abs(total - mono.A)) < 1e-12 * scale
    np.testing.assert_allclose(F, mono.f, atol=1e-12 * np.max(np.abs(F)))


@pytest.mark.parametrize("p", [2, 3])
def test_polynomial_solution_is_reproduced(p):
    mp = build_square_tgrid().discretize(p, 1, p - 1)
    coeffs, system = solve_direct(mp, BUBBLE_LOAD)
    exact = bubble_interpolant(mp)
    for c, e in zip(coeffs, exact):
        np.testing.assert_allclose(c, e, atol=1e-11)
    x = np.concatenate([e[d >= 0] for e, d in zip(exact, system.dofs)])
    order = np.argsort(np.concatenate([d[d >= 0] for d in system.dofs]))
    resid = system.A @ x[order] - system.f
    assert np.max(np.abs(resid)) < 1e-11


def test_solution_minimizes_energy():
    mp = build_square_tgrid().discretize(2, 2, 1)
    system = assemble_monolithic(mp, EXP)
    x = np.linalg.solve(system.A, system.f)
    J = lambda y: 0.5 * y @ system.A @ y - system.f @ y
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert J(x + 1e-2 * rng.standard_normal(len(x))) > J(x)


def test_zero_load_gives_zero_solution():
    coeffs, _ = solve_direct(build_square_tgrid().discretize(2, 2, 1), None)
    assert all(np.all(c == 0) for c in coeffs)


def test_invariant_under_patch_reordering():
    order = [2, 0, 1]
    a = build_square_tgrid().discretize(3, 2, 2)
    b = build_square_tgrid([TEE_SPLITS[i] for i in order]).discretize(3, 2, 2)
    ca, _ = solve_direct(a, EXP)
    cb, _ = solve_direct(b, EXP)
    for new, old in enumerate(order):
        np.testing.assert_allclose(cb[new], ca[old], atol=1e-12)


def test_dense_spectrum_of_identity():
    ev = dense_spectrum(lambda x: x, lambda x: x, 6)
    np.testing.assert_allclose(ev, 1.0)
    assert dense_kappa(ev) == pytest.approx(1.0)


def test_dense_kappa_ignores_null_space():
    assert dense_kappa([0.0, 1e-14, 2.0, 8.0]) == pytest.approx(4.0)


def test_saddle_coarse_basis_satisfies_constraints():
    rng = np.random.default_rng(1)
    Q = rng.standard_normal((8, 8))
    S = Q @ Q.T
    C = np.zeros((2, 8))
    C[0, 1] = C[1, 5] = 1.0
    Psi = saddle_coarse_basis(S, C)
    np.testing.assert_allclose(C @ Psi, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("mp", [build_square_tgrid().discretize(2, 2, 1),
                                build_square_tgrid().discretize(3, 3, 2),
                                mini_ring().discretize(2, 2, 1),
                                mini_ring().discretize(3, 3, 2)])
def test_spectral_floor(mp):
    ops = IetiDPSolver(mp, EXP).ops
    ev = dense_spectrum(ops.apply_F, ops.apply_MsD, ops.num_multipliers)
    assert ev[0] >= 1 - 1e-6
