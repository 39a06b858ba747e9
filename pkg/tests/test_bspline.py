import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ietidg.bspline import (
    DomainError,
    GeometryMap,
    InvalidGeometryError,
    InvalidSmoothnessError,
    annular_sector,
    basis_matrix,
    eval_basis,
    eval_basis_many,
    eval_geometry,
    make_knot_vector,
    make_space,
    rectangle,
)
from ietidg.oracle import cox_de_boor


@st.composite
def degree_level_smoothness(draw, pmax=7, rmax=5):
    p = draw(st.integers(1, pmax))
    r = draw(st.integers(0, rmax))
    s = draw(st.integers(0, p - 1))
    return p, r, s


def test_knot_vector_coarsest():
    kv = make_knot_vector(2, 0, 1)
    np.testing.assert_array_equal(kv.knots, [0, 0, 0, 1, 1, 1])
    assert kv.dim == 3


def test_knot_vector_one_refinement():
    kv = make_knot_vector(2, 1, 1)
    np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0.5, 1, 1, 1])
    assert kv.dim == 4


def test_knot_vector_reduced_smoothness():
    kv = make_knot_vector(3, 2, 1)
    np.testing.assert_array_equal(kv.breakpoints, [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_array_equal(kv.multiplicities, [4, 2, 2, 2, 4])
    # 4 + 3*2 + 4 = 14 knots, 14 - 3 - 1 = 10 functions
    assert kv.dim == 2 ** 2 * (3 - 1) + 1 + 1 == 10
    # independent count: number of nonzero columns of the full Cox-de Boor table
    x = np.linspace(0, 1, 401)
    assert cox_de_boor(kv.knots, 3, x).shape[1] == 10


@pytest.mark.parametrize("p,s", [(2, 2), (3, 5), (2, -1)])
def test_invalid_smoothness(p, s):
    with pytest.raises(InvalidSmoothnessError):
        make_knot_vector(p, 2, s)


@settings(max_examples=60, deadline=None)
@given(degree_level_smoothness())
def test_dimension_formula(prs):
    p, r, s = prs
    kv = make_knot_vector(p, r, s)
    assert kv.dim == 2 ** r * (p - s) + s + 1
    assert kv.num_elements == 2 ** r
    assert kv.mesh_size == pytest.approx(2.0 ** -r)


def test_dimension_formula_full_grid():
    for p in range(1, 8):
        for r in range(6):
            for s in range(p):
                assert make_knot_vector(p, r, s).dim == 2 ** r * (p - s) + s + 1


@settings(max_examples=40, deadline=None)
@given(degree_level_smoothness(), st.integers(0, 2 ** 31 - 1))
def test_partition_of_unity_and_nonnegativity(prs, seed):
    kv = make_knot_vector(*prs)
    x = np.random.default_rng(seed).random(1000)
    _, vals = eval_basis_many(kv, x)
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-13)
    assert np.all(vals >= -1e-15)


def test_partition_of_unity_at_knots_and_ends():
    kv = make_knot_vector(3, 3, 0)
    x = np.concatenate([kv.breakpoints, [1.0]])
    _, vals = eval_basis_many(kv, x)
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-14)


def test_linear_hat_value():
    kv = make_knot_vector(1, 1, 0)
    M = basis_matrix(kv, [0.25])
    assert M[0, 1] == pytest.approx(0.5)


def test_matches_plain_cox_de_boor():
    kv = make_knot_vector(4, 3, 2)
    x = np.random.default_rng(1).random(300)
    for d in (0, 1):
        ref = cox_de_boor(kv.knots, 4, x, deriv=True)[d]
        np.testing.assert_allclose(basis_matrix(kv, x, d), ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(degree_level_smoothness(pmax=6, rmax=4), st.integers(0, 2 ** 31 - 1))
def test_derivative_matches_finite_differences(prs, seed):
    kv = make_knot_vector(*prs)
    rng = np.random.default_rng(seed)
    x = rng.uniform(1e-3, 1 - 1e-3, 50)
    bp = kv.breakpoints
    x = x[np.min(np.abs(x[:, None] - bp[None, :]), axis=1) > 1e-4]
    h = 1e-6
    d = basis_matrix(kv, x, 1)
    fd = (basis_matrix(kv, x + h) - basis_matrix(kv, x - h)) / (2 * h)
    scale = max(1.0, np.max(np.abs(d)))
    assert np.max(np.abs(d - fd)) / scale < 1e-5


def test_right_limits_at_knots_left_limit_at_one():
    kv = make_knot_vector(2, 1, 0)
    first, _ = eval_basis(kv, 0.5)
    assert first == 2  # span to the right of the C0 knot
    first, vals = eval_basis(kv, 1.0)
    assert first == kv.dim - 3
    assert vals[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, np.nan])
def test_domain_error(x):
    with pytest.raises(DomainError):
        eval_basis(make_knot_vector(2, 1, 1), x)


def test_tensor_nonzero_count():
    space = make_space(3, 2, 1)
    rng = np.random.default_rng(0)
    u, v = rng.random(50), rng.random(50)
    idx, val = space.eval(u, v)
    assert idx.shape == (50, 16)
    assert np.all(val > 0)
    np.testing.assert_allclose(val.sum(axis=1), 1.0, atol=1e-14)


def test_lexicographic_u_fastest():
    space = make_space(2, 1, 1)
    assert space.index(1, 0) == 1
    assert space.index(0, 1) == space.kv_u.dim
    i, j = space.unravel(space.index(3, 2))
    assert (i, j) == (3, 2)


def test_identity_geometry():
    G = rectangle(0, 0, 1, 1)
    uv = np.random.default_rng(2).random((20, 2))
    X, J = eval_geometry(G, uv[:, 0], uv[:, 1])
    np.testing.assert_allclose(X, uv, atol=1e-15)
    np.testing.assert_allclose(J, np.broadcast_to(np.eye(2), J.shape), atol=1e-14)


def test_quarter_annulus_is_exact_circle():
    G = annular_sector(1.0, 2.0, 0.0, np.pi / 2)
    rng = np.random.default_rng(3)
    u, v = rng.random(10_000), rng.random(10_000)
    X, _ = eval_geometry(G, u, v)
    assert np.max(np.abs(np.linalg.norm(X, axis=1) - (1 + v))) < 1e-12


@pytest.mark.parametrize("G", [annular_sector(1.0, 2.0, 0.3, 1.2), rectangle(-1, 2, 3, 2.5)])
def test_jacobian_matches_finite_differences(G):
    rng = np.random.default_rng(4)
    u, v = rng.uniform(0.01, 0.99, 40), rng.uniform(0.01, 0.99, 40)
    _, J = eval_geometry(G, u, v)
    h = 1e-6
    du = (eval_geometry(G, u + h, v)[0] - eval_geometry(G, u - h, v)[0]) / (2 * h)
    dv = (eval_geometry(G, u, v + h)[0] - eval_geometry(G, u, v - h)[0]) / (2 * h)
    fd = np.stack([du, dv], axis=-1)
    assert np.max(np.abs(J - fd)) / np.max(np.abs(J)) < 1e-6


def test_jacobian_sign_constant_on_sector():
    G = annular_sector(1.0, 1.2, 0.0, np.pi / 2)
    g = np.linspace(0, 1, 21)
    U, V = np.meshgrid(g, g)
    _, J = eval_geometry(G, U.ravel(), V.ravel())
    det = np.linalg.det(J)
    assert np.all(det < 0) or np.all(det > 0)


def test_zero_weight_denominator():
    space = make_space(2, 0, 1)
    G = GeometryMap(space, np.zeros((9, 2)), np.zeros(9))
    with pytest.raises(InvalidGeometryError):
        eval_geometry(G, 0.5, 0.5)


def test_control_point_count_checked():
    with pytest.raises(InvalidGeometryError):
        GeometryMap(make_space(2, 0, 1), np.zeros((8, 2)))
