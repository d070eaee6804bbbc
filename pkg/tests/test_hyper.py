import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_legendre

from phgp.fem import FemSpace, QuadratureRule, assemble_mass, assemble_weighted_mass, uniform_mesh
from phgp.hyper import (
    HyperBasis,
    HyperField,
    HyperParams,
    clamp_mask,
    pack,
    param_count,
    param_names,
    unpack,
    weighted_mass_tensor,
)

from conftest import element_quad, hat

Q5 = QuadratureRule(5)


@pytest.mark.parametrize("basis, count", [(HyperBasis.p1(11), 46), (HyperBasis.legendre(3), 18), (HyperBasis.legendre(0), 6)])
def test_param_count(basis, count):
    hp = HyperParams.initial(basis)
    assert param_count(hp) == count
    assert pack(hp).size == count
    assert len(param_names(basis)) == count


def test_basis_parse_and_dict_round_trip():
    for text in ("p1:11", "legendre:3", "legendre:0", "p1:2"):
        b = HyperBasis.parse(text, 2.0)
        assert str(b) == text
        assert HyperBasis.from_dict(b.to_dict()) == b
    for bad in ("p1:1", "cheb:3", "legendre:-1", "p1"):
        with pytest.raises(ValueError):
            HyperBasis.parse(bad)


def test_p1_basis_is_nodal_and_partition_of_unity():
    b = HyperBasis.p1(6, 2.0)
    np.testing.assert_allclose(b.evaluate(b.nodes), np.eye(6), atol=0)
    x = np.linspace(0, 2, 57)
    np.testing.assert_allclose(b.evaluate(x).sum(axis=0), 1.0, atol=1e-15)


def test_legendre_basis_is_shifted_legendre():
    b = HyperBasis.legendre(4, 2.0)
    x = np.linspace(0, 2, 33)
    v = b.evaluate(x)
    for r in range(5):
        np.testing.assert_allclose(v[r], eval_legendre(r, x - 1.0), atol=1e-13)


def test_basis_evaluate_keeps_shape():
    b = HyperBasis.p1(4)
    assert b.evaluate(np.zeros((3, 5))).shape == (4, 3, 5)
    assert HyperBasis.legendre(2).evaluate(np.zeros((3, 5))).shape == (3, 3, 5)
    assert HyperBasis.p1(4).evaluate(0.3).shape == (4,)
    assert HyperBasis.legendre(2).evaluate(0.3).shape == (3,)
    assert np.ndim(HyperField.constant(HyperBasis.legendre(2), 1.0)(0.3)) == 0


def test_constant_fields():
    for b in (HyperBasis.p1(5), HyperBasis.legendre(3)):
        f = HyperField.constant(b, 2.5)
        np.testing.assert_allclose(f(np.linspace(0, 1, 11)), 2.5, atol=1e-14)


def test_field_rejects_bad_coefficients():
    b = HyperBasis.p1(3)
    with pytest.raises(ValueError):
        HyperField(b, [1.0, 2.0])
    with pytest.raises(ValueError):
        HyperField(b, [1.0, np.nan, 0.0])


# ------------------------------------------------------------------ packing


def test_unit_sigma_packs_to_zero_log():
    hp = HyperParams.initial(HyperBasis.p1(3), sigma_f=1.0)
    assert pack(hp)[-2] == 0.0
    assert pack(hp)[-1] == pytest.approx(np.log(1e-2))


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["p1", "legendre"]),
    dim=st.integers(2, 8),
    data=st.data(),
)
def test_pack_unpack_round_trip(kind, dim, data):
    basis = HyperBasis(kind, dim)
    theta = np.array(data.draw(st.lists(finite, min_size=4 * dim + 2, max_size=4 * dim + 2)))
    hp = unpack(theta, basis)
    assert np.array_equal(pack(hp), theta)
    assert unpack(pack(hp), basis) == hp


def test_unpack_length_mismatch():
    with pytest.raises(ValueError):
        unpack(np.zeros(10), HyperBasis.p1(3))


def test_replace_and_validation():
    hp = HyperParams.initial(HyperBasis.p1(3))
    hp2 = hp.replace(sigma_f=2.0, lam_q=np.array([0.0, 1.0, 2.0]))
    assert hp2.sigma_f == pytest.approx(2.0)
    np.testing.assert_array_equal(hp2.lam_q.coeffs, [0, 1, 2])
    assert hp != hp2
    with pytest.raises(ValueError):
        hp.replace(sigma_n=0.0)
    with pytest.raises(ValueError):
        HyperParams.initial(HyperBasis.p1(3), sigma_f=-1.0)
    with pytest.raises(ValueError):
        HyperParams(hp.m_q, hp.m_p, hp.lam_q, HyperField.constant(HyperBasis.p1(4), 1.0))


# ------------------------------------------------------------------ weighted mass tensors


def space(n):
    return FemSpace(uniform_mesh(n))


def test_constant_basis_tensor_is_mass():
    sp = space(7)
    W = weighted_mass_tensor(sp, HyperBasis.legendre(0), Q5)
    assert W.shape == (1, 7, 7)
    np.testing.assert_allclose(W[0], assemble_mass(sp, Q5), atol=1e-16)


def test_p1_tensor_sums_to_mass():
    sp = space(9)
    W = weighted_mass_tensor(sp, HyperBasis.p1(4), Q5)
    np.testing.assert_allclose(W.sum(axis=0), assemble_mass(sp, Q5), atol=1e-15)


def test_tensor_entry_matches_direct_quadrature():
    sp = space(5)
    nodes = sp.mesh.nodes
    for basis in (HyperBasis.p1(4), HyperBasis.legendre(3)):
        W = weighted_mass_tensor(sp, basis, Q5)
        for r, i, j in [(0, 0, 0), (1, 1, 2), (2, 3, 3), (3, 4, 3)]:
            psi = lambda x: basis.evaluate(x)[r]
            ref = element_quad(lambda x: psi(x) * hat(nodes, i)(x) * hat(nodes, j)(x), nodes)
            if basis.kind == "p1":
                # the hyper mesh does not align with the FEM mesh: integrate piecewise
                fine = np.union1d(nodes, basis.nodes)
                ref = element_quad(lambda x: psi(x) * hat(nodes, i)(x) * hat(nodes, j)(x), fine)
            assert W[r, i, j] == pytest.approx(ref, abs=1e-3 if basis.kind == "p1" else 1e-14)


def test_tensor_on_aligned_p1_meshes_is_exact():
    # hyper nodes coincide with FEM nodes: products are cubic per element
    sp = space(9)
    basis = HyperBasis.p1(5)
    nodes = sp.mesh.nodes
    W = weighted_mass_tensor(sp, basis, Q5)
    for r, i, j in [(0, 0, 1), (2, 4, 4), (3, 5, 6)]:
        psi = lambda x: basis.evaluate(x)[r]
        ref = element_quad(lambda x: psi(x) * hat(nodes, i)(x) * hat(nodes, j)(x), nodes)
        assert W[r, i, j] == pytest.approx(ref, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(coeffs=st.lists(st.floats(0.0, 10.0), min_size=4, max_size=4), n=st.integers(2, 15))
def test_linearity_for_nonnegative_p1_coefficients(coeffs, n):
    sp = space(n)
    basis = HyperBasis.p1(4)
    field = HyperField(basis, coeffs)
    assert clamp_mask(field, sp, Q5).all()
    W = weighted_mass_tensor(sp, basis, Q5)
    direct = assemble_weighted_mass(sp, field, Q5)
    np.testing.assert_allclose(np.tensordot(field.coeffs, W, axes=1), direct, rtol=0, atol=1e-13)
    assert np.linalg.eigvalsh(direct).min() >= -1e-12
    assert np.all(field(np.linspace(0, 1, 301)) >= 0)


def test_clamp_mask_marks_negative_region():
    sp = space(11)
    field = HyperField(HyperBasis.legendre(1), [0.0, 1.0])  # 2x - 1 on [0, 1]
    mask = clamp_mask(field, sp, Q5)
    x = sp.tables(Q5).x
    np.testing.assert_array_equal(mask, x >= 0.5)
    W = weighted_mass_tensor(sp, field.basis, Q5, mask)
    Mk = np.tensordot(field.coeffs, W, axes=1)
    ref = assemble_weighted_mass(sp, lambda x: np.maximum(2 * x - 1, 0.0), Q5)
    np.testing.assert_allclose(Mk, ref, atol=1e-15)
