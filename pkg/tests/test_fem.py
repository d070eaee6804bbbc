import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import Polynomial

from phgp.fem import (
    FemSpace,
    Mesh1D,
    MeshMismatchError,
    QuadratureRule,
    assemble_derivative,
    assemble_mass,
    assemble_weighted_mass,
    boundary_vectors,
    eval_field,
    uniform_mesh,
)

Q5 = QuadratureRule(5)


def space(n, length=1.0):
    return FemSpace(uniform_mesh(n, length))


def exact_weighted_mass(nodes, coeffs):
    """Exact integral of poly * phi_i * phi_j, element by element."""
    n = len(nodes)
    w = Polynomial(coeffs)
    out = np.zeros((n, n))
    for e in range(n - 1):
        a, b = nodes[e], nodes[e + 1]
        loc = [Polynomial([b, -1.0]) / (b - a), Polynomial([-a, 1.0]) / (b - a)]
        for i in range(2):
            for j in range(2):
                p = (w * loc[i] * loc[j]).integ()
                out[e + i, e + j] += p(b) - p(a)
    return out


# ------------------------------------------------------------------ meshes


def test_uniform_mesh_41_node_spacing():
    m = uniform_mesh(41, 1.0)
    assert m.node_count == 41
    np.testing.assert_allclose(m.element_sizes, 0.025, rtol=0, atol=1e-15)
    assert m.nodes[0] == 0.0 and m.nodes[-1] == 1.0


def test_uniform_mesh_small_cases():
    np.testing.assert_array_equal(uniform_mesh(2, 1.0).nodes, [0.0, 1.0])
    np.testing.assert_array_equal(uniform_mesh(3, 2.0).nodes, [0.0, 1.0, 2.0])


@pytest.mark.parametrize("n, length", [(1, 1.0), (0, 1.0), (5, 0.0), (5, -1.0)])
def test_uniform_mesh_rejects_bad_arguments(n, length):
    with pytest.raises(ValueError):
        uniform_mesh(n, length)


def test_mesh_invariants_enforced():
    with pytest.raises(ValueError):
        Mesh1D(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        Mesh1D(np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        Mesh1D(np.array([0.0]))


def test_quadrature_rule_exact_to_degree():
    q = QuadratureRule(5)
    for deg in range(10):
        assert np.isclose(np.sum(q.weights * q.points**deg), 1.0 / (deg + 1), rtol=0, atol=1e-15)
    assert not np.isclose(np.sum(q.weights * q.points**10), 1.0 / 11, rtol=0, atol=1e-12)


# ------------------------------------------------------------------ mass matrices


def test_unit_mass_three_nodes():
    M = assemble_mass(space(3), Q5)
    expected = np.array([[1 / 6, 1 / 12, 0], [1 / 12, 1 / 3, 1 / 12], [0, 1 / 12, 1 / 6]])
    np.testing.assert_allclose(M, expected, rtol=0, atol=1e-15)


def test_zero_weight_gives_zero_matrix():
    M = assemble_weighted_mass(space(6), lambda x: np.zeros_like(x), Q5)
    assert np.all(M == 0.0)


def test_non_finite_weight_raises():
    with pytest.raises(FloatingPointError):
        assemble_weighted_mass(space(4), lambda x: np.where(x > 0.5, np.inf, 1.0), Q5)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_polynomial_weights_match_exact_integration(n, rng):
    sp = space(n, 1.3)
    for deg in range(8):  # 2 * order - 3
        coeffs = rng.standard_normal(deg + 1)
        M = assemble_weighted_mass(sp, Polynomial(coeffs), Q5)
        np.testing.assert_allclose(M, exact_weighted_mass(sp.mesh.nodes, coeffs), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 12),
    coeffs=st.lists(st.floats(-3, 3), min_size=1, max_size=4),
)
def test_weighted_mass_symmetric(n, coeffs):
    M = assemble_weighted_mass(space(n), Polynomial(coeffs), Q5)
    assert np.max(np.abs(M - M.T)) <= 1e-14


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12), shift=st.floats(0.0, 2.0), amp=st.floats(0.0, 5.0), k=st.floats(0.5, 8.0))
def test_weighted_mass_psd_for_nonnegative_weight(n, shift, amp, k):
    w = lambda x: shift + amp * np.sin(k * x) ** 2
    M = assemble_weighted_mass(space(n), w, Q5)
    assert np.linalg.eigvalsh(M).min() >= -1e-12


def test_refinement_is_second_order():
    w = lambda x: 1.0 + np.cos(3 * x)
    alpha = lambda x: np.sin(2 * x) + x
    xi, wt = np.polynomial.legendre.leggauss(80)
    x = 0.5 * (xi + 1)
    exact = 0.5 * np.sum(wt * w(x) * alpha(x) ** 2)
    errs = []
    for n in (9, 17, 33, 65):
        sp = space(n)
        a = alpha(sp.mesh.nodes)
        errs.append(abs(a @ assemble_weighted_mass(sp, w, Q5) @ a - exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


# ------------------------------------------------------------------ derivative and boundary


def test_derivative_three_nodes_entry():
    D = assemble_derivative(space(3), space(3), Q5)
    assert np.isclose(D[0, 0], -0.5, rtol=0, atol=1e-15)


def test_derivative_two_nodes():
    D = assemble_derivative(space(2), space(2), Q5)
    np.testing.assert_allclose(D, [[-0.5, 0.5], [-0.5, 0.5]], rtol=0, atol=1e-15)


@pytest.mark.parametrize("n", [3, 7, 41])
def test_derivative_kills_constants_at_interior_rows(n):
    D = assemble_derivative(space(n), space(n), Q5)
    rowsum = D @ np.ones(n)
    np.testing.assert_allclose(rowsum, 0.0, atol=1e-13)


def test_derivative_integration_by_parts(rng):
    # D + D^T = B_R B_R^T - B_L B_L^T for P1/P1 on one mesh
    sp = space(9)
    D = assemble_derivative(sp, sp, Q5)
    bl, br = boundary_vectors(sp)
    np.testing.assert_allclose(D + D.T, np.outer(br, br) - np.outer(bl, bl), atol=1e-14)


def test_derivative_rejects_mismatched_meshes():
    with pytest.raises(MeshMismatchError):
        assemble_derivative(space(3), space(4), Q5)


def test_boundary_vectors():
    bl, br = boundary_vectors(space(3))
    np.testing.assert_array_equal(bl, [1, 0, 0])
    np.testing.assert_array_equal(br, [0, 0, 1])
    bl, br = boundary_vectors(space(41))
    assert bl[0] == 1 and br[40] == 1 and bl.sum() == 1 and br.sum() == 1
    assert bl @ np.ones(41) == 1.0


# ------------------------------------------------------------------ field evaluation


def test_eval_field_interpolates_nodes():
    sp = space(6)
    x = sp.mesh.nodes
    c = x**2
    for xi, ci in zip(x, c):
        assert eval_field(sp, c, xi) == pytest.approx(ci, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0.0, 1.0))
def test_eval_field_partition_of_unity(x):
    sp = space(7)
    assert eval_field(sp, np.ones(7), x) == pytest.approx(1.0, abs=1e-15)


def test_eval_field_midpoint_average(rng):
    sp = space(5)
    c = rng.standard_normal(5)
    mids = 0.5 * (sp.mesh.nodes[:-1] + sp.mesh.nodes[1:])
    np.testing.assert_allclose(eval_field(sp, c, mids), 0.5 * (c[:-1] + c[1:]), atol=1e-15)


def test_eval_field_errors():
    sp = space(4)
    with pytest.raises(ValueError):
        eval_field(sp, np.ones(4), 1.5)
    with pytest.raises(ValueError):
        eval_field(sp, np.ones(3), 0.5)


def test_quad_table_interpolation_matches_eval_field(rng):
    sp = space(8)
    tab = sp.tables(Q5)
    c = rng.standard_normal(8)
    np.testing.assert_allclose(tab.interpolate(c), eval_field(sp, c, tab.x), atol=1e-14)
