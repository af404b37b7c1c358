import numpy as np
import pytest
import scipy.linalg as sla

from taylorhel.geometry import build_domain
from taylorhel.grid import Field, GridSpec, pair_22
from taylorhel.harmonic import HarmonicError, build_basis, circulation, cut_flux, decompose, is_in_Qperp

HARMONIC_ENERGY_16 = 6.367755623624059


def dense_harmonic_space(c):
    """Null space of divergence and interior curl over tangential face fluxes."""
    tang = np.flatnonzero(~c.boundary_faces)
    ie = np.flatnonzero(c.interior_edges)
    div = c.d2.toarray()[:, tang]
    curl = (c.d1.T.toarray() * c.mass2)[ie][:, tang]
    return tang, sla.null_space(np.vstack([div, curl]))


@pytest.mark.parametrize("recipe, spec", [("solid_torus", GridSpec(12, 12, 4)), ("nfold_torus", GridSpec(16, 10, 4))])
def test_basis_spans_dense_null_space(recipe, spec):
    c, atlas = build_domain(recipe, spec)
    basis = build_basis(c, atlas)
    tang, N = dense_harmonic_space(c)
    assert N.shape[1] == atlas.g
    for hf in basis.h_fields:
        v = hf.values[tang]
        proj = N @ (N.T @ v)
        assert np.linalg.norm(v - proj) <= 1e-9 * np.linalg.norm(v)


def test_flux_and_period_matrices(handled16):
    c, atlas, basis = handled16
    F = np.array([[cut_flux(h, s) for s in atlas.surfaces] for h in basis.h_fields])
    P = np.array([[circulation(r, g) for g in atlas.gamma] for r in basis.rho])
    assert np.allclose(F, np.eye(atlas.g), atol=1e-12)
    assert np.array_equal(P, np.eye(atlas.g))  # exact, not approximate


def test_harmonic_fields_are_l2_orthogonal_to_curls(handled16, rng):
    c, _, basis = handled16
    a = rng.standard_normal(c.size(1)) * c.interior_edges
    curl = Field(2, c.d1 @ a, c)
    for h in basis.h_fields:
        assert abs(pair_22(c, h, curl)) <= 1e-12 * np.sqrt(pair_22(c, h, h) * pair_22(c, curl, curl))


def test_harmonic_energy_frozen(torus16):
    # regression value for the flux-normalised field of the 16^3 solid torus
    c, _, basis = torus16
    assert pair_22(c, basis.h_fields[0], basis.h_fields[0]) == pytest.approx(HARMONIC_ENERGY_16, rel=1e-10)


def test_decompose_roundtrip(handled16, rng):
    c, atlas, basis = handled16
    a = rng.standard_normal(c.size(1)) * c.interior_edges
    coef = rng.standard_normal(atlas.g)
    B = Field(2, c.d1 @ a + sum(x * h.values for x, h in zip(coef, basis.h_fields)), c)
    dec = decompose(B, basis)
    assert np.allclose(dec.coefficients, coef, atol=1e-12)
    assert is_in_Qperp(dec.B_sigma, basis)
    assert not is_in_Qperp(B, basis)


def test_decompose_rejects_bad_fields(torus16, rng):
    c, _, basis = torus16
    with pytest.raises(HarmonicError):
        decompose(Field(2, rng.standard_normal(c.size(2)) * ~c.boundary_faces, c), basis)
    leak = np.zeros(c.size(2))
    leak[np.flatnonzero(c.boundary_faces)[0]] = 1.0
    with pytest.raises(HarmonicError):
        decompose(Field(2, leak, c), basis)


def test_box_has_empty_basis(box12):
    c, atlas, basis = box12
    assert basis.g == 0 and basis.flux_matrix.shape == (0, 0)
